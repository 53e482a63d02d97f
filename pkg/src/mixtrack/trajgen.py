"""Synthetic single-source bounding-box trajectory generation.

Trajectories are piece-wise compositions of four elementary motion
functions (static, constant velocity, constant acceleration, sinusoid)
evaluated on the global frame index.  The free offset (or amplitude)
parameter of every segment after the first is solved so that the value
at the segment's first frame equals the previous segment's final value,
which makes every generated coordinate sequence continuous by
construction.
"""

from dataclasses import dataclass, field

import numpy as np

from . import fileformats

KINDS = ("static", "constant_velocity", "constant_acceleration", "sinusoid")

_N_FREE_PARAMS = {
    "static": 1,
    "constant_velocity": 2,
    "constant_acceleration": 3,
    "sinusoid": 3,
}


class ConfigError(ValueError):
    pass


class TrajGenError(RuntimeError):
    pass


@dataclass(frozen=True)
class ElementaryMotion:
    """One motion law; `params` are the closed-form coefficients.

    static: (a0,); constant_velocity: (a1, a0);
    constant_acceleration: (a2, a1, a0); sinusoid: (a, omega, phi0).
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown motion kind {self.kind!r}")
        if len(self.params) != _N_FREE_PARAMS[self.kind]:
            raise ConfigError(
                f"{self.kind} takes {_N_FREE_PARAMS[self.kind]} params, got {len(self.params)}"
            )


def eval_elementary(motion, t):
    """Evaluate the motion law at (integer or array) frame index t."""
    p = motion.params
    if motion.kind == "static":
        return p[0] * np.ones_like(np.asarray(t, dtype=float))
    if motion.kind == "constant_velocity":
        return p[0] * np.asarray(t, dtype=float) + p[1]
    if motion.kind == "constant_acceleration":
        t = np.asarray(t, dtype=float)
        return p[0] * t**2 + p[1] * t + p[2]
    a, omega, phi0 = p
    return a * np.sin(omega * np.asarray(t, dtype=float) + phi0)


@dataclass(frozen=True)
class SegmentPlan:
    """Segment boundaries (start frame of each segment) and motion kinds."""

    boundaries: tuple  # first frame of each segment; boundaries[0] == 0
    kinds: tuple
    total_frames: int

    def __post_init__(self):
        if len(self.boundaries) != len(self.kinds):
            raise ConfigError("one kind per segment required")
        bs = self.boundaries
        if not bs or bs[0] != 0 or list(bs) != sorted(set(bs)):
            raise ConfigError("boundaries must be strictly increasing and start at 0")
        if bs[-1] >= self.total_frames:
            raise ConfigError("last segment must contain at least one frame")


@dataclass
class TrajGenConfig:
    T: int = 60
    s_max: int = 3
    kind_probabilities: tuple = (0.25, 0.25, 0.25, 0.25)
    mu_a1: float = 0.0
    sigma_a1: float = 0.005
    mu_a2: float = 0.0
    sigma_a2: float = 0.0002
    mu_omega: float = 0.05
    sigma_omega: float = 0.02
    mu_phi0: float = 0.0
    sigma_phi0: float = float(np.pi)
    mu_b0: float = float(np.log(0.1))
    sigma_b0: float = 0.5
    mu_r: float = float(np.log(2.5))
    sigma_r: float = 0.3
    min_box_size: float = 0.02
    frame_margin: float = 0.25
    max_retries: int = 100

    def validate(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.s_max < 1:
            raise ConfigError("s_max must be >= 1")
        p = np.asarray(self.kind_probabilities, dtype=float)
        if p.shape != (4,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError("kind_probabilities must be 4 nonnegative values summing to 1")
        for name in ("sigma_a1", "sigma_a2", "sigma_omega", "sigma_phi0", "sigma_b0", "sigma_r"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.min_box_size < 0 or self.frame_margin < 0:
            raise ConfigError("min_box_size and frame_margin must be >= 0")
        return self


def _solve_offset(kind, partial_params, t0, target, rng, cfg):
    """Return the full param tuple whose value at frame t0 equals target."""
    if kind == "static":
        return (target,)
    if kind == "constant_velocity":
        (a1,) = partial_params
        return (a1, target - a1 * t0)
    if kind == "constant_acceleration":
        a2, a1 = partial_params
        return (a2, a1, target - a2 * t0**2 - a1 * t0)
    omega, phi0 = partial_params
    # Amplitude is the free parameter; keep it bounded by re-drawing the
    # phase when sin(omega*t0 + phi0) is close to zero.
    for _ in range(cfg.max_retries):
        s = np.sin(omega * t0 + phi0)
        if abs(s) >= 0.2:
            return (target / s, omega, phi0)
        phi0 = rng.normal(cfg.mu_phi0, cfg.sigma_phi0)
    raise TrajGenError("could not find a usable sinusoid phase")


def gen_segment_plan(rng, cfg):
    s = int(rng.integers(1, cfg.s_max + 1))
    s = min(s, cfg.T)  # cannot have more segments than frames
    if s > 1:
        cuts = rng.choice(np.arange(1, cfg.T), size=s - 1, replace=False)
        boundaries = (0,) + tuple(sorted(int(c) for c in cuts))
    else:
        boundaries = (0,)
    kinds = tuple(KINDS[int(rng.choice(4, p=cfg.kind_probabilities))] for _ in range(s))
    return SegmentPlan(boundaries, kinds, cfg.T)


def gen_coordinate_sequence(rng, cfg, start, return_motions=False):
    """Generate one continuous length-T coordinate sequence starting at `start`."""
    cfg.validate()
    plan = gen_segment_plan(rng, cfg)
    ends = plan.boundaries[1:] + (cfg.T,)
    seq = np.empty(cfg.T)
    motions = []
    target = float(start)
    for kind, t0, t1 in zip(plan.kinds, plan.boundaries, ends):
        if kind == "static":
            partial = ()
        elif kind == "constant_velocity":
            partial = (rng.normal(cfg.mu_a1, cfg.sigma_a1),)
        elif kind == "constant_acceleration":
            partial = (rng.normal(cfg.mu_a2, cfg.sigma_a2), rng.normal(cfg.mu_a1, cfg.sigma_a1))
        else:
            partial = (
                rng.normal(cfg.mu_omega, cfg.sigma_omega),
                rng.normal(cfg.mu_phi0, cfg.sigma_phi0),
            )
        motion = ElementaryMotion(kind, _solve_offset(kind, partial, t0, target, rng, cfg))
        motions.append(motion)
        frames = np.arange(t0, t1)
        seq[t0:t1] = eval_elementary(motion, frames)
        target = eval_elementary(motion, t1 - 1).item()
    if return_motions:
        return seq, plan, motions
    return seq


def gen_box_trajectory(rng, cfg):
    """Generate one (T, 4) box trajectory in canonical LTRB coordinates."""
    cfg.validate()
    for _ in range(cfg.max_retries):
        x0 = rng.uniform(0.0, 1.0)
        y0 = rng.uniform(0.0, 1.0)
        b0 = rng.lognormal(cfg.mu_b0, cfg.sigma_b0)
        r_ab = rng.lognormal(cfg.mu_r, cfg.sigma_r)
        x = gen_coordinate_sequence(rng, cfg, x0)
        y = gen_coordinate_sequence(rng, cfg, y0)
        w = gen_coordinate_sequence(rng, cfg, b0)
        h = w * r_ab
        traj = np.stack([x, y - h, x + w, y], axis=1)
        if not (np.all(np.isfinite(traj)) and np.all(w > 0)):
            continue
        # reject degenerate tracks: collapsing boxes or boxes that wander
        # far outside the unit frame (the box center must stay within a
        # margin of the frame; the margin grows with T so that long
        # sequences are allowed proportionally more wander)
        cx = x + 0.5 * w
        cy = y - 0.5 * h
        margin = cfg.frame_margin * max(1.0, cfg.T / 60.0)
        lo, hi = -margin, 1.0 + margin
        if (np.min(w) >= cfg.min_box_size and np.min(h) >= cfg.min_box_size
                and np.all((cx >= lo) & (cx <= hi) & (cy >= lo) & (cy <= hi))):
            return traj
    raise TrajGenError("exceeded retry budget generating a valid trajectory")


def gen_dataset(rng, cfg, count, out_path):
    """Generate `count` trajectories and write them as a trajectory file."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    trajs = [gen_box_trajectory(rng, cfg) for _ in range(count)]
    fileformats.write_trajectories(out_path, trajs)
    return trajs


def _box_noise_scale(box, noise_scale):
    w = box[2] - box[0]
    h = box[3] - box[1]
    return noise_scale * np.array([w, h, w, h])


def gen_multisource_scene(rng, cfg, n_sources, T, occlusion_rate, noise_scale,
                          min_start_separation=0.2):
    """Generate ground-truth tracks plus noisy, partially-occluded detections.

    Returns (truth, observations, labels): truth is (T, n_sources, 4);
    observations is a per-frame list of (K_t, 4) arrays; labels is a
    per-frame list of source indices aligned with the observation rows.
    First-frame detections are never dropped so that every source is
    observable at initialization, and a new source's first-frame box is
    re-sampled if it overlaps an existing one too strongly.
    """
    if n_sources < 1:
        raise ConfigError("n_sources must be >= 1")
    if not 0.0 <= occlusion_rate < 1.0:
        raise ConfigError("occlusion_rate must be in [0, 1)")
    cfg = TrajGenConfig(**{**cfg.__dict__, "T": T})
    from .metrics import iou  # local import to avoid a cycle at module load

    tracks = []
    for _ in range(n_sources):
        for _ in range(cfg.max_retries):
            traj = gen_box_trajectory(rng, cfg)
            if all(iou(traj[0], other[0]) <= min_start_separation for other in tracks):
                break
        tracks.append(traj)
    truth = np.stack(tracks, axis=1)

    observations = []
    labels = []
    for t in range(T):
        boxes = []
        srcs = []
        for n in range(n_sources):
            if t > 0 and rng.uniform() < occlusion_rate:
                continue
            box = truth[t, n].copy()
            if noise_scale > 0:
                box = box + rng.normal(0.0, 1.0, size=4) * _box_noise_scale(box, noise_scale)
            boxes.append(box)
            srcs.append(n)
        perm = rng.permutation(len(boxes))
        observations.append(np.array([boxes[i] for i in perm]).reshape(len(boxes), 4))
        labels.append([srcs[i] for i in perm])
    return truth, observations, labels
