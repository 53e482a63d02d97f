"""Baseline trackers sharing the variational-EM assignment machinery.

* Deep AR: a deterministic LSTM regressor (no latent variable) replaces
  the stochastic prior as the per-source prediction model.
* VKF: a variational Kalman filter; the prediction is a random walk
  around the previous posterior mean with a per-source process
  covariance learned by a moment-matching M-step.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as F
from . import srnn, vem

DEEP_AR_SHAPES = {
    "lstm.W": (srnn.S_DIM + srnn.H_DIM, 4 * srnn.H_DIM),
    "lstm.b": (4 * srnn.H_DIM,),
    "out.W": (srnn.H_DIM, 2 * srnn.S_DIM),
    "out.b": (2 * srnn.S_DIM,),
}


def init_deep_ar_params(rng):
    return srnn.init_params(rng, shapes=DEEP_AR_SHAPES)


def validate_deep_ar_params(params):
    return srnn.validate_params(params, shapes=DEEP_AR_SHAPES)


def deep_ar_predict(params, x, h, c):
    """One step: consume x, return (new_h, new_c, mean, logvar)."""
    h, c = srnn.lstm_step(params, x, h, c)
    out = h @ params["out.W"] + params["out.b"]
    return h, c, F.slice_last(out, 0, srnn.S_DIM), F.slice_last(out, srnn.S_DIM, 2 * srnn.S_DIM)


def deep_ar_sequence_ll(params, seqs, eps, feedback_mask):
    """Mean per-sequence log-likelihood with pinned feedback mask.

    Same harness contract as `srnn.sequence_elbo` (eps is accepted for
    interface compatibility and ignored: the model has no latent).
    """
    seqs = np.asarray(seqs, dtype=float)
    b, t_len, _ = seqs.shape
    mask = np.asarray(feedback_mask, dtype=float).reshape(b, t_len, 1)
    prev_input = np.zeros((b, srnn.S_DIM))
    h = np.zeros((b, srnn.H_DIM))
    c = np.zeros((b, srnn.H_DIM))
    ll = np.zeros(b)
    for t in range(t_len):
        h, c, mu, logv = deep_ar_predict(params, prev_input, h, c)
        s_t = seqs[:, t]
        ll = ll + F.sum_last(srnn.gaussian_logpdf_terms(s_t, mu, logv))
        prev_input = mask[:, t] * s_t + (1.0 - mask[:, t]) * mu
    total = F.sumall(ll) * (1.0 / b)
    return total, {"recon": ll, "kl": ll * 0.0}


def deep_ar_sequence_gradients(params, seqs, eps, feedback_mask):
    return srnn.sequence_gradients(params, seqs, eps, feedback_mask,
                                   elbo_fn=deep_ar_sequence_ll)


def train_deep_ar(params, train_set, val_set, cfg):
    """Same Adam + early-stopping harness as the stochastic model."""
    return srnn.train(params, train_set, val_set, cfg,
                      elbo_fn=deep_ar_sequence_ll,
                      grad_fn=deep_ar_sequence_gradients)


# --- Deep AR tracking -------------------------------------------------------


def _deep_ar_pass(params, observations, phi, eta, n, rng, eps_s=None):
    """Causal sweep for one source with the autoregressive predictor."""
    t_len = len(observations)
    if eps_s is None:
        eps_s = rng.standard_normal((t_len, srnn.S_DIM))
    h = np.zeros(srnn.H_DIM)
    c = np.zeros(srnn.H_DIM)
    prev = np.zeros(srnn.S_DIM)
    s_out = np.zeros((t_len, srnn.S_DIM))
    m_out = np.zeros((t_len, srnn.S_DIM))
    v_out = np.zeros((t_len, srnn.S_DIM))
    for t in range(t_len):
        h, c, mu, logv = deep_ar_predict(params, prev, h, c)
        obs_t = np.asarray(observations[t]).reshape(-1, 4)
        eta_col = np.asarray(eta[t])[:, n : n + 1] if obs_t.shape[0] else np.zeros((0, 1))
        m_t, v_t = vem.e_s_update(obs_t, phi[t], eta_col,
                                  mu[None, :], np.exp(logv)[None, :])
        m_out[t] = m_t[0]
        v_out[t] = v_t[0]
        s_out[t] = m_t[0] + np.sqrt(v_t[0]) * eps_s[t]
        prev = s_out[t]
    return s_out, m_out, v_out


def deep_ar_run(params, observations, cfg):
    """Track one sequence with the Deep AR predictor inside the EM loop."""
    cfg.validate()
    validate_deep_ar_params(params)
    t_len = len(observations)
    if t_len < 1:
        raise vem.TrackingError("empty observation sequence")
    phi = vem.build_phi(observations, cfg.r_phi)
    rngs = [np.random.default_rng(c)
            for c in np.random.SeedSequence(cfg.seed).spawn(cfg.n_sources)]
    first = np.asarray(observations[0]).reshape(-1, 4)
    m, V = vem._init_from_boxes(first, phi[0], t_len, cfg.n_sources)
    eta = None
    diagnostics = []
    for it in range(cfg.n_iters):
        eta = [vem.e_w_update(observations[t], phi[t], m[t], V[t]) for t in range(t_len)]
        for n in range(cfg.n_sources):
            s_n, m_n, v_n = _deep_ar_pass(params, observations, phi, eta, n, rngs[n])
            m[:, n], V[:, n] = m_n, v_n
        diagnostics.append((it, _mean_eta_entropy(eta), float(np.mean(np.sum(V, axis=-1)))))
    return vem.VemState(m=m, V=V, eta=eta, s=m.copy(), z=np.zeros_like(m),
                        diagnostics=diagnostics)


def _mean_eta_entropy(eta):
    ent = [
        -np.sum(e * np.log(np.clip(e, 1e-300, None))) / max(e.shape[0], 1)
        for e in eta if e.shape[0] > 0
    ]
    return float(np.mean(ent)) if ent else 0.0


# --- variational Kalman filter ----------------------------------------------


def vkf_lambda_update(m, V):
    """Moment-matching process covariance per source.

    For each source, the diagonal covariance of the one-step increments:
    mean over t of (m_t - m_{t-1})^2 + V_t + V_{t-1}.
    """
    m = np.asarray(m, dtype=float)
    V = np.asarray(V, dtype=float)
    if m.shape[0] < 2:
        return V[0].copy()
    dm = np.diff(m, axis=0)
    return np.mean(dm**2 + V[1:] + V[:-1], axis=0)


def vkf_run(observations, cfg):
    """Track one sequence with a random-walk predictor (identity dynamics)."""
    cfg.validate()
    t_len = len(observations)
    if t_len < 1:
        raise vem.TrackingError("empty observation sequence")
    phi = vem.build_phi(observations, cfg.r_phi)
    first = np.asarray(observations[0]).reshape(-1, 4)
    m, V = vem._init_from_boxes(first, phi[0], t_len, cfg.n_sources)
    lam = V[0].copy()  # (N, 4) process variances, initialized like V
    anchor = m[0].copy()
    eta = None
    diagnostics = []
    for it in range(cfg.n_iters):
        eta = [vem.e_w_update(observations[t], phi[t], m[t], V[t]) for t in range(t_len)]
        for t in range(t_len):
            mu = anchor if t == 0 else m[t - 1]
            obs_t = np.asarray(observations[t]).reshape(-1, 4)
            m[t], V[t] = vem.e_s_update(obs_t, phi[t], eta[t], mu, lam)
        for n in range(cfg.n_sources):
            lam[n] = vkf_lambda_update(m[:, n], V[:, n])
        diagnostics.append((it, _mean_eta_entropy(eta), float(np.mean(np.sum(V, axis=-1)))))
    return vem.VemState(m=m, V=V, eta=eta, s=m.copy(), z=np.zeros_like(m),
                        diagnostics=diagnostics)
