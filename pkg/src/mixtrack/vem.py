"""Variational-EM tracking loop.

Given per-frame detections (unordered, possibly missing) and a
pre-trained dynamical prior (`srnn`), the tracker alternates:

* E-W: soft assignment of each detection to a source, in log space;
* E-S: per-source Gaussian posterior over the true box, combining the
  assigned detections with the model's predictive Gaussian;
* sampling pass: draw a fresh state/latent sample trajectory per
  source, interleaving the recurrent prediction with the E-S update so
  that the sample at frame t conditions only on frames <= t (causal);
* optionally a fine-tune of the latent encoder and an M-step on the
  observation covariances.

All covariances are diagonal and stored as length-4 variance vectors.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import autodiff as F
from . import srnn

_LOG_2PI = float(np.log(2.0 * np.pi))


class TrackingError(RuntimeError):
    pass


@dataclass
class VemConfig:
    n_sources: int
    r_phi: float = 0.04
    n_iters: int = 70
    subseq_len: int = 30
    init_iters: int = 20
    fine_tune: bool = False
    finetune_steps: int = 5
    finetune_lr: float = 1e-4
    m_step: bool = False
    seed: int = 0

    def validate(self):
        if self.n_sources < 1:
            raise ValueError("n_sources must be >= 1")
        if self.r_phi <= 0:
            raise ValueError("r_phi must be > 0")
        for name in ("n_iters", "subseq_len", "init_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        return self


@dataclass
class VemState:
    m: np.ndarray            # (T, N, 4) posterior means
    V: np.ndarray            # (T, N, 4) posterior variances (diagonal)
    eta: list                # per frame, (K_t, N) assignment responsibilities
    s: np.ndarray            # (T, N, 4) current state samples
    z: np.ndarray            # (T, N, 4) current latent samples
    diagnostics: list = field(default_factory=list)


# --- observation model ------------------------------------------------------


def build_phi(observations, r_phi):
    """Per-frame diagonal observation variances from frame-1 box sizes.

    Slot k at any frame reuses the size of frame-1 detection k (modulo
    the frame-1 count when a later frame has more detections).
    """
    first = np.asarray(observations[0]).reshape(-1, 4)
    k1 = first.shape[0]
    if k1 == 0:
        raise TrackingError("no detections in the first frame")
    w = first[:, 2] - first[:, 0]
    h = first[:, 3] - first[:, 1]
    base = r_phi**2 * np.stack([w**2, h**2, w**2, h**2], axis=1)
    if np.any(base <= 0):
        raise TrackingError("frame-1 detections must have positive width and height")
    phi = []
    for obs_t in observations:
        k_t = np.asarray(obs_t).reshape(-1, 4).shape[0]
        phi.append(base[np.arange(k_t) % k1])
    return phi


# --- E-steps ----------------------------------------------------------------


def e_s_update(obs_t, phi_t, eta_t, mu, v):
    """Posterior (m, V) for all sources at one frame.

    obs_t: (K, 4); phi_t: (K, 4); eta_t: (K, N); mu, v: (N, 4) predictive
    Gaussian per source.  With no detections the posterior equals the
    predictive distribution.
    """
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(v, dtype=float)
    obs_t = np.asarray(obs_t, dtype=float).reshape(-1, 4)
    if obs_t.shape[0] == 0:
        return mu.copy(), v.copy()
    phi_t = np.asarray(phi_t, dtype=float).reshape(-1, 4)
    eta_t = np.asarray(eta_t, dtype=float)
    # (K, N, 4) weighted precisions summed over detections
    prec = np.einsum("kn,kd->nd", eta_t, 1.0 / phi_t) + 1.0 / v
    V = 1.0 / prec
    mean_term = np.einsum("kn,kd->nd", eta_t, obs_t / phi_t) + mu / v
    return V * mean_term, V


def e_w_update(obs_t, phi_t, m_t, V_t):
    """Assignment responsibilities (K, N) at one frame, log-space stable."""
    obs_t = np.asarray(obs_t, dtype=float).reshape(-1, 4)
    if obs_t.shape[0] == 0:
        return np.zeros((0, np.asarray(m_t).shape[0]))
    phi_t = np.asarray(phi_t, dtype=float).reshape(-1, 4)
    m_t = np.asarray(m_t, dtype=float)
    V_t = np.asarray(V_t, dtype=float)
    diff = obs_t[:, None, :] - m_t[None, :, :]          # (K, N, 4)
    log_beta = -0.5 * np.sum(
        _LOG_2PI + np.log(phi_t)[:, None, :] + diff**2 / phi_t[:, None, :], axis=-1
    )
    log_beta = log_beta - 0.5 * np.sum(V_t[None, :, :] / phi_t[:, None, :], axis=-1)
    return np.exp(log_beta - logsumexp(log_beta, axis=1, keepdims=True))


def m_step_phi(observations, eta, m, V):
    """Full observation covariance update; per frame a (K_t, 4, 4) array."""
    m = np.asarray(m, dtype=float)
    V = np.asarray(V, dtype=float)
    out = []
    for t, obs_t in enumerate(observations):
        obs_t = np.asarray(obs_t, dtype=float).reshape(-1, 4)
        k_t = obs_t.shape[0]
        cov = np.zeros((k_t, 4, 4))
        for k in range(k_t):
            w = np.asarray(eta[t][k], dtype=float)
            diff = obs_t[k][None, :] - m[t]              # (N, 4)
            cov[k] = np.einsum("n,ni,nj->ij", w, diff, diff)
            cov[k] += np.diag(w @ V[t])
        out.append(cov)
    return out


# --- sampling pass ----------------------------------------------------------


def sampling_pass(params, observations, phi, eta, prev_s, n, rng,
                  eps_z=None, eps_s=None):
    """One causal resampling sweep for source `n`.

    prev_s: (T, 4) state samples from the previous iteration, used to
    drive the encoder's recurrent embedding.  Returns (s, z, m, V), all
    (T, 4): fresh samples and the per-frame posterior for this source.
    """
    t_len = len(observations)
    prev_s = np.asarray(prev_s, dtype=float)
    if eps_z is None:
        eps_z = rng.standard_normal((t_len, srnn.Z_DIM))
    if eps_s is None:
        eps_s = rng.standard_normal((t_len, srnn.S_DIM))
    enc = srnn.RecurrentState.zero()
    dec = srnn.RecurrentState.zero()
    z_prev = np.zeros(srnn.Z_DIM)
    s_prev_new = np.zeros(srnn.S_DIM)
    s_prev_old = np.zeros(srnn.S_DIM)
    s_out = np.zeros((t_len, srnn.S_DIM))
    z_out = np.zeros((t_len, srnn.Z_DIM))
    m_out = np.zeros((t_len, srnn.S_DIM))
    v_out = np.zeros((t_len, srnn.S_DIM))
    for t in range(t_len):
        enc = srnn.recurrence_step(params, s_prev_old, enc)
        dec = srnn.recurrence_step(params, s_prev_new, dec)
        q = srnn.encode_z(params, enc, prev_s[t], z_prev)
        z_t = srnn.reparam_sample(rng, q, eps=eps_z[t])
        pred = srnn.decode_s(params, dec, z_t)
        obs_t = np.asarray(observations[t]).reshape(-1, 4)
        eta_col = np.asarray(eta[t])[:, n : n + 1] if obs_t.shape[0] else np.zeros((0, 1))
        m_t, v_t = e_s_update(obs_t, phi[t], eta_col,
                              pred.mean[None, :], pred.variance[None, :])
        m_out[t] = m_t[0]
        v_out[t] = v_t[0]
        s_out[t] = m_t[0] + np.sqrt(v_t[0]) * eps_s[t]
        z_out[t] = z_t
        z_prev = z_t
        s_prev_old = prev_s[t]
        s_prev_new = s_out[t]
    return s_out, z_out, m_out, v_out


# --- encoder fine-tuning ----------------------------------------------------


def finetune_objective(params, prev_s, cur_s, eps_z):
    """Sample-based objective for the latent encoder on one source.

    prev_s drives the encoder recurrence (previous iteration's samples),
    cur_s drives the generative recurrence (current samples).  Returns
    reconstruction log-likelihood minus the prior KL, summed over
    frames.  Dual-mode: params may hold Tensors.
    """
    prev_s = np.asarray(prev_s, dtype=float)
    cur_s = np.asarray(cur_s, dtype=float)
    t_len = cur_s.shape[0]
    h_enc = np.zeros(srnn.H_DIM)
    c_enc = np.zeros(srnn.H_DIM)
    h_dec = np.zeros(srnn.H_DIM)
    c_dec = np.zeros(srnn.H_DIM)
    z_prev = np.zeros(srnn.Z_DIM)
    prev_in_enc = np.zeros(srnn.S_DIM)
    prev_in_dec = np.zeros(srnn.S_DIM)
    total = 0.0
    for t in range(t_len):
        h_enc, c_enc = srnn.lstm_step(params, prev_in_enc, h_enc, c_enc)
        h_dec, c_dec = srnn.lstm_step(params, prev_in_dec, h_dec, c_dec)
        mu_q, logv_q = srnn.encode_z_raw(params, h_enc, prev_s[t], z_prev)
        z_t = mu_q + F.exp(0.5 * logv_q) * eps_z[t]
        mu_p, logv_p = srnn.prior_z_raw(params, h_dec, z_prev)
        mu_s, logv_s = srnn.decode_s_raw(params, h_dec, z_t)
        total = total + F.sumall(srnn.gaussian_logpdf_terms(cur_s[t], mu_s, logv_s))
        total = total - F.sumall(srnn.kl_diag_terms(mu_q, logv_q, mu_p, logv_p))
        z_prev = z_t
        prev_in_enc = prev_s[t]
        prev_in_dec = cur_s[t]
    return total


def finetune_gradients(params, prev_s, cur_s, eps_z):
    """Gradients of the negative objective w.r.t. encoder parameters only."""
    tparams = dict(params)
    enc_names = [k for k in params if k.startswith("ez.")]
    for k in enc_names:
        tparams[k] = F.Tensor(params[k].copy())
    loss = -1.0 * finetune_objective(tparams, prev_s, cur_s, eps_z)
    loss.backward()
    return float(loss.value), {k: tparams[k].grad for k in enc_names}


def e_z_finetune(params, prev_s_all, cur_s_all, rng, steps=5, lr=1e-4):
    """A few Adam steps on the latent encoder, summed over all sources.

    prev_s_all, cur_s_all: (T, N, 4).  Returns updated params (copy).
    """
    params = {k: v.copy() for k, v in params.items()}
    enc = {k: params[k] for k in params if k.startswith("ez.")}
    opt = srnn.Adam(enc, lr=lr)
    n_src = cur_s_all.shape[1]
    for _ in range(steps):
        grads = {k: np.zeros_like(v) for k, v in enc.items()}
        for n in range(n_src):
            eps = rng.standard_normal((cur_s_all.shape[0], srnn.Z_DIM))
            _, g = finetune_gradients(params, prev_s_all[:, n], cur_s_all[:, n], eps)
            for k in g:
                grads[k] += g[k]
        opt.step(enc, grads)
        params.update(enc)
    return params


# --- initialization and main loop -------------------------------------------


def _init_from_boxes(boxes, phi_base, t_len, n_sources):
    """Constant-in-time init: source n pinned at box n (modulo count)."""
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    idx = np.arange(n_sources) % boxes.shape[0]
    m = np.broadcast_to(boxes[idx], (t_len, n_sources, 4)).copy()
    V = np.broadcast_to(phi_base[idx % phi_base.shape[0]], (t_len, n_sources, 4)).copy()
    return m, V


def _iterate(params, observations, phi, m, V, s, z, n_iters, rngs,
             cfg, diagnostics=None, iter_offset=0):
    """Run VEM iterations in place on (m, V, s, z); returns eta as well."""
    t_len = len(observations)
    n_src = m.shape[1]
    eta = None
    phi = [p.copy() for p in phi]
    for it in range(n_iters):
        eta = [e_w_update(observations[t], phi[t], m[t], V[t]) for t in range(t_len)]
        prev_s = s.copy()
        for n in range(n_src):
            s_n, z_n, m_n, v_n = sampling_pass(
                params, observations, phi, eta, prev_s[:, n], n, rngs[n]
            )
            s[:, n], z[:, n], m[:, n], V[:, n] = s_n, z_n, m_n, v_n
        if cfg.fine_tune:
            params = e_z_finetune(params, prev_s, s, rngs[0],
                                  steps=cfg.finetune_steps, lr=cfg.finetune_lr)
        if cfg.m_step:
            full = m_step_phi(observations, eta, m, V)
            phi = [np.einsum("kii->ki", c).copy() if c.size else c.reshape(0, 4)
                   for c in full]
        if diagnostics is not None:
            ent = [
                -np.sum(e * np.log(np.clip(e, 1e-300, None))) / max(e.shape[0], 1)
                for e in eta if e.shape[0] > 0
            ]
            diagnostics.append((
                iter_offset + it,
                float(np.mean(ent)) if ent else 0.0,
                float(np.mean(np.sum(V, axis=-1))),
            ))
    return eta, params, phi


def cascade_init(params, observations, phi, cfg, rngs):
    """Piecewise-constant initialization over subsequences.

    The first subsequence is pinned at the frame-1 detections; each
    later one at the refined final-frame posterior means of its
    predecessor.  The returned (m, V) hold the constant values; the
    refined estimates are only used to hand off between subsequences.
    """
    t_len = len(observations)
    n_src = cfg.n_sources
    first = np.asarray(observations[0]).reshape(-1, 4)
    phi_base = phi[0]
    m_init = np.zeros((t_len, n_src, 4))
    v_init = np.zeros((t_len, n_src, 4))
    anchor = first
    for start in range(0, t_len, cfg.subseq_len):
        stop = min(start + cfg.subseq_len, t_len)
        m_c, v_c = _init_from_boxes(anchor, phi_base, stop - start, n_src)
        m_init[start:stop] = m_c
        v_init[start:stop] = v_c
        sub_obs = observations[start:stop]
        sub_phi = phi[start:stop]
        m = m_c.copy()
        V = v_c.copy()
        s = m.copy()
        z = np.zeros_like(m)
        _iterate(params, sub_obs, sub_phi, m, V, s, z, cfg.init_iters, rngs, cfg)
        anchor = m[-1]
    return m_init, v_init


def run(params, observations, cfg):
    """Track one observation sequence; returns a VemState."""
    cfg.validate()
    srnn.validate_params(params)
    t_len = len(observations)
    if t_len < 1:
        raise TrackingError("empty observation sequence")
    phi = build_phi(observations, cfg.r_phi)
    seq = np.random.SeedSequence(cfg.seed)
    children = seq.spawn(2 * cfg.n_sources)
    init_rngs = [np.random.default_rng(c) for c in children[: cfg.n_sources]]
    main_rngs = [np.random.default_rng(c) for c in children[cfg.n_sources :]]

    m, V = cascade_init(params, observations, phi, cfg, init_rngs)
    s = m.copy()
    z = np.zeros_like(m)
    diagnostics = []
    eta, params, phi = _iterate(
        params, observations, phi, m, V, s, z, cfg.n_iters, main_rngs, cfg,
        diagnostics=diagnostics,
    )
    return VemState(m=m, V=V, eta=eta, s=s, z=z, diagnostics=diagnostics)
