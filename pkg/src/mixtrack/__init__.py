"""Multi-object tracking with a mixture of dynamical variational autoencoders."""

__version__ = "0.1.0"
