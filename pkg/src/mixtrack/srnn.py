"""Stochastic recurrent VAE over 4-D bounding-box sequences.

One forward LSTM (input 4, hidden 8) embeds the past of the sequence and
is shared by the generative and inference networks.  Three MLP heads
emit diagonal Gaussians: the latent prior, the box decoder and the
causal latent encoder.  All heads output mean and log-variance, so every
produced variance is strictly positive.

The forward code is written against the dual-mode helpers in
`autodiff`, so the same functions run on plain numpy arrays (inference
inside the tracking loop) and on `Tensor`s (training gradients).
"""

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as F
from .autodiff import Tensor

S_DIM = 4
Z_DIM = 4
H_DIM = 8

PARAM_SHAPES = {
    "lstm.W": (S_DIM + H_DIM, 4 * H_DIM),
    "lstm.b": (4 * H_DIM,),
    "ds.l1.W": (H_DIM + Z_DIM, 16),
    "ds.l1.b": (16,),
    "ds.out.W": (16, 2 * S_DIM),
    "ds.out.b": (2 * S_DIM,),
    "dz.l1.W": (H_DIM + Z_DIM, 8),
    "dz.l1.b": (8,),
    "dz.l2.W": (8, 8),
    "dz.l2.b": (8,),
    "dz.out.W": (8, 2 * Z_DIM),
    "dz.out.b": (2 * Z_DIM,),
    "ez.l1.W": (H_DIM + S_DIM + Z_DIM, 16),
    "ez.l1.b": (16,),
    "ez.l2.W": (16, 8),
    "ez.l2.b": (8,),
    "ez.out.W": (8, 2 * Z_DIM),
    "ez.out.b": (2 * Z_DIM,),
}


class ParamError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class RecurrentState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zero(cls, batch_shape=()):
        return cls(np.zeros(batch_shape + (H_DIM,)), np.zeros(batch_shape + (H_DIM,)))


@dataclass
class GaussianParams:
    """Diagonal Gaussian stored as mean and log-variance."""

    mean: np.ndarray
    log_variance: np.ndarray

    @property
    def variance(self):
        return np.exp(self.log_variance)


def init_params(rng, shapes=PARAM_SHAPES):
    """Uniform +-1/sqrt(fan_in) weights, zero biases, forget-gate bias +1."""
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            limit = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-limit, limit, size=shape)
    if "lstm.b" in params:
        hidden = shapes["lstm.b"][0] // 4
        params["lstm.b"][hidden : 2 * hidden] = 1.0
    return params


def validate_params(params, shapes=PARAM_SHAPES):
    missing = set(shapes) - set(params)
    extra = set(params) - set(shapes)
    if missing or extra:
        raise ParamError(f"parameter names mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, shape in shapes.items():
        got = F.value_of(params[name]).shape
        if got != shape:
            raise ParamError(f"{name}: expected shape {shape}, got {got}")
        if not np.all(np.isfinite(F.value_of(params[name]))):
            raise ParamError(f"{name}: non-finite entries")
    return params


# --- network forward passes -------------------------------------------------


def lstm_step(params, x, h, c, prefix="lstm"):
    hidden = F.value_of(h).shape[-1]
    gates = F.concat([x, h], axis=-1) @ params[prefix + ".W"] + params[prefix + ".b"]
    i = F.sigmoid(F.slice_last(gates, 0, hidden))
    f = F.sigmoid(F.slice_last(gates, hidden, 2 * hidden))
    g = F.tanh(F.slice_last(gates, 2 * hidden, 3 * hidden))
    o = F.sigmoid(F.slice_last(gates, 3 * hidden, 4 * hidden))
    c_new = f * c + i * g
    h_new = o * F.tanh(c_new)
    return h_new, c_new


def _head(params, names, x, out_dim):
    y = x
    for name in names[:-1]:
        y = F.tanh(y @ params[name + ".W"] + params[name + ".b"])
    y = y @ params[names[-1] + ".W"] + params[names[-1] + ".b"]
    return F.slice_last(y, 0, out_dim), F.slice_last(y, out_dim, 2 * out_dim)


def decode_s_raw(params, h, z):
    return _head(params, ["ds.l1", "ds.out"], F.concat([h, z], axis=-1), S_DIM)


def prior_z_raw(params, h, z_prev):
    return _head(params, ["dz.l1", "dz.l2", "dz.out"], F.concat([h, z_prev], axis=-1), Z_DIM)


def encode_z_raw(params, h, s_t, z_prev):
    return _head(params, ["ez.l1", "ez.l2", "ez.out"], F.concat([h, s_t, z_prev], axis=-1), Z_DIM)


def recurrence_step(params, s_prev, state):
    h, c = lstm_step(params, np.asarray(s_prev, dtype=float), state.h, state.c)
    return RecurrentState(h, c)


def prior_z(params, state, z_prev):
    mu, logv = prior_z_raw(params, state.h, np.asarray(z_prev, dtype=float))
    return GaussianParams(mu, logv)


def decode_s(params, state, z):
    mu, logv = decode_s_raw(params, state.h, np.asarray(z, dtype=float))
    return GaussianParams(mu, logv)


def encode_z(params, state, s_t, z_prev):
    mu, logv = encode_z_raw(
        params, state.h, np.asarray(s_t, dtype=float), np.asarray(z_prev, dtype=float)
    )
    return GaussianParams(mu, logv)


def reparam_sample(rng, g, eps=None):
    if eps is None:
        eps = rng.standard_normal(np.shape(g.mean))
    return g.mean + np.exp(0.5 * g.log_variance) * eps


# --- densities --------------------------------------------------------------

_LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_logpdf_terms(x, mu, logv):
    """Elementwise log N(x; mu, exp(logv)); callers sum over dimensions."""
    return -0.5 * (_LOG_2PI + logv + F.square(x - mu) * F.exp(-1.0 * logv))


def kl_diag_terms(mu_q, logv_q, mu_p, logv_p):
    """Elementwise KL(N_q || N_p) for diagonal Gaussians."""
    return 0.5 * (
        logv_p
        - logv_q
        + F.exp(logv_q - logv_p)
        + F.square(mu_q - mu_p) * F.exp(-1.0 * logv_p)
        - 1.0
    )


def kl_diag(mu_q, v_q, mu_p, v_p):
    """Closed-form KL between diagonal Gaussians given plain variances."""
    return float(
        np.sum(kl_diag_terms(np.asarray(mu_q), np.log(v_q), np.asarray(mu_p), np.log(v_p)))
    )


# --- sequence ELBO ----------------------------------------------------------


def sequence_elbo(params, seqs, eps, feedback_mask):
    """Single-sample ELBO of a batch of sequences with pinned noise.

    seqs: (B, T, 4); eps: (B, T, 4) latent noise; feedback_mask: (B, T),
    1 = teacher forcing (ground truth fed to the recurrence for the next
    step), 0 = scheduled sampling (decoder mean fed back instead).
    Returns (mean ELBO, per-sequence breakdown arrays).
    """
    seqs = np.asarray(seqs, dtype=float)
    b, t_len, _ = seqs.shape
    if t_len < 1:
        raise ValueError("sequences must have at least one frame")
    mask = np.asarray(feedback_mask, dtype=float).reshape(b, t_len, 1)

    prev_input = np.zeros((b, S_DIM))
    h = np.zeros((b, H_DIM))
    c = np.zeros((b, H_DIM))
    z_prev = np.zeros((b, Z_DIM))
    recon = np.zeros(b)
    kl = np.zeros(b)
    for t in range(t_len):
        h, c = lstm_step(params, prev_input, h, c)
        s_t = seqs[:, t]
        mu_q, logv_q = encode_z_raw(params, h, s_t, z_prev)
        z_t = mu_q + F.exp(0.5 * logv_q) * eps[:, t]
        mu_p, logv_p = prior_z_raw(params, h, z_prev)
        mu_s, logv_s = decode_s_raw(params, h, z_t)
        recon = recon + F.sum_last(gaussian_logpdf_terms(s_t, mu_s, logv_s))
        kl = kl + F.sum_last(kl_diag_terms(mu_q, logv_q, mu_p, logv_p))
        z_prev = z_t
        prev_input = mask[:, t] * s_t + (1.0 - mask[:, t]) * mu_s
    total = F.sumall(recon - kl) * (1.0 / b)
    return total, {"recon": recon, "kl": kl}


def elbo(params, s_seq, rng, teacher_forcing_prob=1.0):
    """Single-sequence ELBO estimate; draws latent noise and feedback mask."""
    s_seq = np.asarray(s_seq, dtype=float)
    if s_seq.ndim != 2 or s_seq.shape[0] < 1:
        raise ValueError("s_seq must be a nonempty (T, 4) sequence")
    t_len = s_seq.shape[0]
    eps = rng.standard_normal((1, t_len, Z_DIM))
    mask = (rng.uniform(size=(1, t_len)) < teacher_forcing_prob).astype(float)
    total, parts = sequence_elbo(params, s_seq[None], eps, mask)
    return float(total), {
        "recon": float(parts["recon"][0]),
        "kl": float(parts["kl"][0]),
    }


def _tensorize(params):
    return {k: Tensor(v.copy()) for k, v in params.items()}


def sequence_gradients(params, seqs, eps, feedback_mask, elbo_fn=sequence_elbo):
    """Exact gradients of the negative mean ELBO for pinned noise draws."""
    tparams = _tensorize(params)
    total, parts = elbo_fn(tparams, seqs, eps, feedback_mask)
    per_seq = F.value_of(parts["recon"] - parts["kl"])
    if not np.all(np.isfinite(per_seq)):
        bad = int(np.flatnonzero(~np.isfinite(per_seq))[0])
        raise TrainingError(f"non-finite loss for sequence index {bad}")
    loss = -1.0 * total
    loss.backward()
    grads = {k: t.grad for k, t in tparams.items()}
    return float(loss.value), grads


def gradients(params, batch, rng, teacher_forcing_prob=1.0):
    """Negative-ELBO value and gradients for a batch of (T, 4) sequences."""
    seqs = np.asarray(batch, dtype=float)
    if seqs.ndim == 2:
        seqs = seqs[None]
    if seqs.shape[0] < 1:
        raise ValueError("batch must be nonempty")
    b, t_len, _ = seqs.shape
    eps = rng.standard_normal((b, t_len, Z_DIM))
    mask = (rng.uniform(size=(b, t_len)) < teacher_forcing_prob).astype(float)
    return sequence_gradients(params, seqs, eps, mask)


# --- optimization -----------------------------------------------------------


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g**2
            params[k] = params[k] - self.lr * (self.m[k] / b1c) / (
                np.sqrt(self.v[k] / b2c) + self.eps
            )
        return params


def linear_tf_schedule(max_epochs):
    """Teacher-forcing probability: 1 -> 0 over the first half, then 0."""
    half = max(1, max_epochs // 2)

    def schedule(epoch):
        return max(0.0, 1.0 - epoch / half)

    return schedule


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    patience: int = 150
    max_epochs: int = 1000
    seed: int = 0
    tf_schedule: object = None  # callable epoch -> prob in [0, 1]
    # teacher-forcing fill for the validation ELBO: 1.0 scores one-step
    # prediction, 0.0 scores deterministic self-rollout (the regime the
    # tracker operates in when detections are missing)
    val_teacher_forcing: float = 1.0

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        return self


def dataset_elbo(params, seqs, elbo_fn=sequence_elbo, chunk=512, teacher_forcing=1.0):
    """Deterministic monitoring ELBO: zero latent noise, fixed feedback mask."""
    seqs = np.asarray(seqs, dtype=float)
    total = 0.0
    for i in range(0, len(seqs), chunk):
        part = seqs[i : i + chunk]
        eps = np.zeros((part.shape[0], part.shape[1], Z_DIM))
        mask = np.full((part.shape[0], part.shape[1]), float(teacher_forcing))
        val, _ = elbo_fn(params, part, eps, mask)
        total += float(val) * part.shape[0]
    return total / len(seqs)


def train(params, train_set, val_set, cfg,
          elbo_fn=sequence_elbo, grad_fn=sequence_gradients, z_dim=Z_DIM):
    """Adam + early stopping on the validation ELBO; returns best params."""
    cfg.validate()
    train_set = np.asarray(train_set, dtype=float)
    val_set = np.asarray(val_set, dtype=float)
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("datasets must be nonempty")
    schedule = cfg.tf_schedule or linear_tf_schedule(cfg.max_epochs)
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in params.items()}
    opt = Adam(params, lr=cfg.learning_rate)
    best_val = -np.inf
    best_params = copy.deepcopy(params)
    bad_epochs = 0
    history = []
    for epoch in range(cfg.max_epochs):
        tf_prob = float(schedule(epoch))
        order = rng.permutation(len(train_set))
        epoch_elbo = 0.0
        for i in range(0, len(order), cfg.batch_size):
            seqs = train_set[order[i : i + cfg.batch_size]]
            b, t_len, _ = seqs.shape
            eps = rng.standard_normal((b, t_len, z_dim))
            mask = (rng.uniform(size=(b, t_len)) < tf_prob).astype(float)
            try:
                loss, grads = grad_fn(params, seqs, eps, mask)
            except TrainingError as e:
                raise TrainingError(f"epoch {epoch}, batch {i // cfg.batch_size}: {e}") from e
            if not np.isfinite(loss):
                raise TrainingError(f"diverged at epoch {epoch}, batch {i // cfg.batch_size}")
            opt.step(params, grads)
            epoch_elbo += -loss * b
        train_elbo = epoch_elbo / len(train_set)
        val_elbo = dataset_elbo(params, val_set, elbo_fn=elbo_fn,
                                teacher_forcing=cfg.val_teacher_forcing)
        history.append((epoch, train_elbo, val_elbo))
        if val_elbo > best_val:
            best_val = val_elbo
            best_params = copy.deepcopy(params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    return best_params, {"history": history, "best_val_elbo": best_val}


# --- persistence ------------------------------------------------------------

_MAGIC = b"MIXTRACK-TNSR\x00"  # 14 bytes; header = magic + uint16 version
_VERSION = 1


def save_params(params, path):
    import os

    parts = [_MAGIC, struct.pack("<H", _VERSION)]
    for name in sorted(params):
        data = np.ascontiguousarray(params[name], dtype="<f8")
        nbytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nbytes)))
        parts.append(nbytes)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(data.tobytes())
    blob = b"".join(parts)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load_params(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:14] != _MAGIC:
        raise ParamError(f"{path}: bad magic at offset 0")
    (version,) = struct.unpack("<H", blob[14:16])
    if version != _VERSION:
        raise ParamError(f"{path}: unsupported version {version} at offset 14")
    params = {}
    off = 16
    while off < len(blob):
        try:
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            end = off + 8 * count
            if end > len(blob):
                raise struct.error("truncated tensor data")
            params[name] = np.frombuffer(blob[off:end], dtype="<f8").reshape(dims).copy()
            off = end
        except (struct.error, UnicodeDecodeError) as e:
            raise ParamError(f"{path}: corrupt entry at offset {off}: {e}") from None
    return params
