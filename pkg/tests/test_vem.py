import numpy as np
import pytest

from mixtrack import srnn, vem
from mixtrack.vem import (
    TrackingError, VemConfig, build_phi, cascade_init, e_s_update,
    e_w_update, e_z_finetune, finetune_gradients, finetune_objective,
    m_step_phi, run, sampling_pass,
)

_LOG_2PI = np.log(2.0 * np.pi)


def random_instance(rng, n=None, k=None):
    n = n or int(rng.integers(1, 4))
    k = k if k is not None else int(rng.integers(0, 4))
    obs = rng.uniform(0.0, 1.0, size=(k, 4))
    phi = rng.uniform(0.005, 0.05, size=(k, 4))
    eta = rng.uniform(0.05, 1.0, size=(k, n))
    if k:
        eta = eta / eta.sum(axis=1, keepdims=True)
    mu = rng.uniform(0.0, 1.0, size=(n, 4))
    v = rng.uniform(0.01, 0.2, size=(n, 4))
    return obs, phi, eta, mu, v


# --- analytic oracles (independent matrix-based implementations) ------------


def oracle_e_s(obs, phi, eta, mu, v):
    """E-S update with explicit 4x4 matrix inverses."""
    n = mu.shape[0]
    m_out = np.zeros((n, 4))
    v_out = np.zeros((n, 4))
    for i in range(n):
        prec = np.diag(1.0 / v[i])
        info = (np.diag(1.0 / v[i]) @ mu[i]).copy()
        for j in range(obs.shape[0]):
            prec = prec + eta[j, i] * np.diag(1.0 / phi[j])
            info = info + eta[j, i] * np.diag(1.0 / phi[j]) @ obs[j]
        cov = np.linalg.inv(prec)
        m_out[i] = cov @ info
        v_out[i] = np.diag(cov)
    return m_out, v_out


def oracle_e_w(obs, phi, m, V):
    """E-W update via per-detection dense Gaussian densities."""
    k, n = obs.shape[0], m.shape[0]
    beta = np.zeros((k, n))
    for j in range(k):
        cov = np.diag(phi[j])
        inv = np.linalg.inv(cov)
        norm = 1.0 / np.sqrt((2 * np.pi) ** 4 * np.linalg.det(cov))
        for i in range(n):
            d = obs[j] - m[i]
            dens = norm * np.exp(-0.5 * d @ inv @ d)
            beta[j, i] = dens * np.exp(-0.5 * np.trace(inv @ np.diag(V[i])))
    return beta / beta.sum(axis=1, keepdims=True)


def oracle_m_step(obs, eta, m, V):
    cov = np.zeros((obs.shape[0], 4, 4))
    for j in range(obs.shape[0]):
        for i in range(m.shape[0]):
            d = (obs[j] - m[i])[:, None]
            cov[j] += eta[j, i] * (d @ d.T + np.diag(V[i]))
    return cov


# --- grid-integration oracles ----------------------------------------------


def grid_posterior_moments(obs_d, phi_d, eta_col, mu_d, v_d, points=4001):
    """1-D posterior mean/variance by direct numerical normalization."""
    lo = min(np.min(obs_d, initial=mu_d), mu_d) - 8 * np.sqrt(v_d)
    hi = max(np.max(obs_d, initial=mu_d), mu_d) + 8 * np.sqrt(v_d)
    s = np.linspace(lo, hi, points)
    log_dens = -0.5 * (s - mu_d) ** 2 / v_d
    for o, p, w in zip(obs_d, phi_d, eta_col):
        log_dens = log_dens - 0.5 * w * (o - s) ** 2 / p
    dens = np.exp(log_dens - log_dens.max())
    dens /= np.trapezoid(dens, s)
    mean = np.trapezoid(s * dens, s)
    var = np.trapezoid((s - mean) ** 2 * dens, s)
    return mean, var


def grid_expected_loglik(o_d, phi_d, m_d, v_d, points=4001):
    """E_{N(s; m, v)}[log N(o; s, phi)] by numerical quadrature."""
    s = np.linspace(m_d - 10 * np.sqrt(v_d), m_d + 10 * np.sqrt(v_d), points)
    q = np.exp(-0.5 * (s - m_d) ** 2 / v_d) / np.sqrt(2 * np.pi * v_d)
    loglik = -0.5 * (_LOG_2PI + np.log(phi_d) + (o_d - s) ** 2 / phi_d)
    return np.trapezoid(q * loglik, s)


# --- oracle comparisons -----------------------------------------------------


def test_e_s_matches_analytic_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        obs, phi, eta, mu, v = random_instance(rng)
        m_ref, v_ref = oracle_e_s(obs, phi, eta, mu, v)
        m_got, v_got = e_s_update(obs, phi, eta, mu, v)
        np.testing.assert_allclose(m_got, m_ref, atol=1e-8)
        np.testing.assert_allclose(v_got, v_ref, atol=1e-8)


def test_e_s_matches_grid_integration():
    rng = np.random.default_rng(1)
    for _ in range(5):
        obs, phi, eta, mu, v = random_instance(rng, n=2, k=2)
        m_got, v_got = e_s_update(obs, phi, eta, mu, v)
        for i in range(2):
            for d in range(4):
                mean, var = grid_posterior_moments(
                    obs[:, d], phi[:, d], eta[:, i], mu[i, d], v[i, d]
                )
                assert abs(m_got[i, d] - mean) < 1e-4
                assert abs(v_got[i, d] - var) < 1e-4


def test_e_w_matches_analytic_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        obs, phi, eta, mu, v = random_instance(rng, k=int(rng.integers(1, 4)))
        eta_got = e_w_update(obs, phi, mu, v)
        eta_ref = oracle_e_w(obs, phi, mu, v)
        np.testing.assert_allclose(eta_got, eta_ref, atol=1e-8)


def test_e_w_matches_grid_integration():
    rng = np.random.default_rng(3)
    for _ in range(5):
        obs, phi, _, m, V = random_instance(rng, n=2, k=2)
        eta_got = e_w_update(obs, phi, m, V)
        log_beta = np.zeros((2, 2))
        for j in range(2):
            for i in range(2):
                log_beta[j, i] = sum(
                    grid_expected_loglik(obs[j, d], phi[j, d], m[i, d], V[i, d])
                    for d in range(4)
                )
        beta = np.exp(log_beta - log_beta.max(axis=1, keepdims=True))
        eta_ref = beta / beta.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(eta_got, eta_ref, atol=1e-4)


def test_m_step_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(100):
        obs, phi, eta, m, V = random_instance(rng, k=int(rng.integers(1, 4)))
        got = m_step_phi([obs], [eta], m[None], V[None])
        ref = oracle_m_step(obs, eta, m, V)
        np.testing.assert_allclose(got[0], ref, atol=1e-8)


def test_m_step_diagonal_matches_grid_integration():
    rng = np.random.default_rng(5)
    obs, phi, eta, m, V = random_instance(rng, n=2, k=2)
    got = m_step_phi([obs], [eta], m[None], V[None])[0]
    for j in range(2):
        for d in range(4):
            # E_q[(o - s)^2] per source by quadrature, mixed with eta
            expect = 0.0
            for i in range(2):
                s = np.linspace(m[i, d] - 10 * np.sqrt(V[i, d]),
                                m[i, d] + 10 * np.sqrt(V[i, d]), 4001)
                q = np.exp(-0.5 * (s - m[i, d]) ** 2 / V[i, d]) / np.sqrt(
                    2 * np.pi * V[i, d]
                )
                expect += eta[j, i] * np.trapezoid(q * (obs[j, d] - s) ** 2, s)
            assert abs(got[j, d, d] - expect) < 1e-4


# --- invariants -------------------------------------------------------------


def test_eta_rows_normalized():
    rng = np.random.default_rng(6)
    for _ in range(200):
        obs, phi, _, m, V = random_instance(rng, k=int(rng.integers(1, 4)))
        eta = e_w_update(obs, phi, m, V)
        np.testing.assert_allclose(eta.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(eta >= 0)


def test_v_positive_and_no_larger_than_prior():
    rng = np.random.default_rng(7)
    for _ in range(200):
        obs, phi, eta, mu, v = random_instance(rng)
        _, v_post = e_s_update(obs, phi, eta, mu, v)
        assert np.all(v_post > 0)
        assert np.all(v_post <= v + 1e-12)  # conditioning cannot widen


def test_mean_in_convex_hull():
    rng = np.random.default_rng(8)
    for _ in range(200):
        obs, phi, eta, mu, v = random_instance(rng, k=int(rng.integers(1, 4)))
        m_post, _ = e_s_update(obs, phi, eta, mu, v)
        for i in range(mu.shape[0]):
            lo = np.minimum(obs.min(axis=0), mu[i])
            hi = np.maximum(obs.max(axis=0), mu[i])
            assert np.all(m_post[i] >= lo - 1e-10)
            assert np.all(m_post[i] <= hi + 1e-10)


def test_e_s_scale_covariance():
    rng = np.random.default_rng(9)
    for _ in range(200):
        obs, phi, eta, mu, v = random_instance(rng)
        c = float(rng.uniform(0.5, 3.0))
        m1, v1 = e_s_update(obs, phi, eta, mu, v)
        m2, v2 = e_s_update(c * obs, c**2 * phi, eta, c * mu, c**2 * v)
        np.testing.assert_allclose(m2, c * m1, rtol=1e-9)
        np.testing.assert_allclose(v2, c**2 * v1, rtol=1e-9)


def test_e_s_no_observations_returns_prior():
    rng = np.random.default_rng(10)
    _, _, _, mu, v = random_instance(rng, n=2, k=0)
    m_post, v_post = e_s_update(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros((0, 2)), mu, v)
    np.testing.assert_array_equal(m_post, mu)
    np.testing.assert_array_equal(v_post, v)


def test_sampling_pass_causality():
    # perturbing observations (and responsibilities) at frames > t0 must
    # not change any output at frames <= t0
    rng = np.random.default_rng(11)
    params = srnn.init_params(rng)
    t_len, n = 12, 2
    for trial in range(10):
        obs = [rng.uniform(0, 1, size=(2, 4)) for _ in range(t_len)]
        phi = build_phi(obs, 0.04)
        m = rng.uniform(0, 1, size=(t_len, n, 4))
        V = rng.uniform(0.01, 0.1, size=(t_len, n, 4))
        eta = [e_w_update(obs[t], phi[t], m[t], V[t]) for t in range(t_len)]
        prev_s = rng.uniform(0, 1, size=(t_len, 4))
        eps_z = rng.standard_normal((t_len, 4))
        eps_s = rng.standard_normal((t_len, 4))
        t0 = int(rng.integers(3, t_len - 2))
        s1, z1, m1, v1 = sampling_pass(params, obs, phi, eta, prev_s, 0, None,
                                       eps_z=eps_z, eps_s=eps_s)
        obs2 = [o.copy() for o in obs]
        eta2 = [e.copy() for e in eta]
        for t in range(t0 + 1, t_len):
            obs2[t] = obs2[t] + rng.normal(0, 0.5, size=obs2[t].shape)
            eta2[t] = np.roll(eta2[t], 1, axis=1)
        s2, z2, m2, v2 = sampling_pass(params, obs2, phi, eta2, prev_s, 0, None,
                                       eps_z=eps_z, eps_s=eps_s)
        np.testing.assert_array_equal(s1[: t0 + 1], s2[: t0 + 1])
        np.testing.assert_array_equal(z1[: t0 + 1], z2[: t0 + 1])
        np.testing.assert_array_equal(m1[: t0 + 1], m2[: t0 + 1])
        np.testing.assert_array_equal(v1[: t0 + 1], v2[: t0 + 1])


# --- observation covariances ------------------------------------------------


def test_build_phi_values_and_modulo():
    obs = [np.array([[0.0, 0.0, 0.2, 0.4], [0.5, 0.5, 0.6, 0.7]]),
           np.array([[0.0, 0.0, 1.0, 1.0]] * 3)]
    phi = build_phi(obs, 0.1)
    np.testing.assert_allclose(phi[0][0], 0.01 * np.array([0.04, 0.16, 0.04, 0.16]))
    np.testing.assert_allclose(phi[0][1], 0.01 * np.array([0.01, 0.04, 0.01, 0.04]))
    # frame 2 has three detections; slot 2 reuses frame-1 slot 0 sizes
    np.testing.assert_allclose(phi[1][2], phi[0][0])
    assert phi[1].shape == (3, 4)


def test_build_phi_requires_first_frame():
    with pytest.raises(TrackingError):
        build_phi([np.zeros((0, 4))], 0.04)


def test_build_phi_rejects_degenerate_boxes():
    with pytest.raises(TrackingError):
        build_phi([np.array([[0.0, 0.0, 0.0, 1.0]])], 0.04)


# --- fine-tuning ------------------------------------------------------------


def test_finetune_gradients_match_finite_differences():
    rng = np.random.default_rng(12)
    params = srnn.init_params(rng)
    prev_s = rng.uniform(0, 1, size=(3, 4))
    cur_s = rng.uniform(0, 1, size=(3, 4))
    eps = rng.standard_normal((3, 4))
    _, grads = finetune_gradients(params, prev_s, cur_s, eps)
    assert set(grads) == {k for k in params if k.startswith("ez.")}
    for seed in range(3):
        d = {k: np.random.default_rng(seed).standard_normal(g.shape) for k, g in grads.items()}
        h = 1e-5
        plus = dict(params, **{k: params[k] + h * d[k] for k in d})
        minus = dict(params, **{k: params[k] - h * d[k] for k in d})
        fd = -(float(finetune_objective(plus, prev_s, cur_s, eps))
               - float(finetune_objective(minus, prev_s, cur_s, eps))) / (2 * h)
        analytic = sum(np.sum(grads[k] * d[k]) for k in d)
        assert abs(fd - analytic) / (abs(fd) + abs(analytic) + 1e-12) < 1e-6


def test_e_z_finetune_only_touches_encoder():
    rng = np.random.default_rng(13)
    params = srnn.init_params(rng)
    s = rng.uniform(0, 1, size=(5, 2, 4))
    updated = e_z_finetune(params, s, s + 0.01, np.random.default_rng(14), steps=2)
    for k in params:
        if k.startswith("ez."):
            assert not np.array_equal(updated[k], params[k])
        else:
            np.testing.assert_array_equal(updated[k], params[k])


# --- initialization and full loop -------------------------------------------


def _toy_scene(rng, t_len=14, n=2):
    from mixtrack import trajgen

    cfg = trajgen.TrajGenConfig(T=t_len)
    truth, obs, labels = trajgen.gen_multisource_scene(rng, cfg, n, t_len, 0.1, 0.02)
    return truth, obs


def test_cascade_init_piecewise_constant():
    rng = np.random.default_rng(15)
    params = srnn.init_params(rng)
    _, obs = _toy_scene(rng, t_len=14)
    cfg = VemConfig(n_sources=2, subseq_len=5, init_iters=2).validate()
    phi = build_phi(obs, cfg.r_phi)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(0).spawn(2)]
    m, V = cascade_init(params, obs, phi, cfg, rngs)
    assert m.shape == (14, 2, 4)
    # constant within each subsequence
    for start in (0, 5, 10):
        block = m[start : start + 5]
        np.testing.assert_array_equal(block, np.broadcast_to(block[:1], block.shape))
    # first block pinned at the frame-1 detections
    np.testing.assert_array_equal(m[0], np.asarray(obs[0])[:2])


def test_run_shapes_and_finiteness():
    rng = np.random.default_rng(16)
    params = srnn.init_params(rng)
    truth, obs = _toy_scene(rng, t_len=12)
    cfg = VemConfig(n_sources=2, n_iters=4, subseq_len=6, init_iters=2, seed=3)
    state = run(params, obs, cfg)
    assert state.m.shape == (12, 2, 4)
    assert np.all(np.isfinite(state.m))
    assert np.all(state.V > 0)
    for t, e in enumerate(state.eta):
        assert e.shape == (np.asarray(obs[t]).reshape(-1, 4).shape[0], 2)
        if e.shape[0]:
            np.testing.assert_allclose(e.sum(axis=1), 1.0, atol=1e-10)
    assert len(state.diagnostics) == 4


def test_run_deterministic_given_seed():
    rng = np.random.default_rng(17)
    params = srnn.init_params(rng)
    _, obs = _toy_scene(rng, t_len=10)
    cfg = VemConfig(n_sources=2, n_iters=3, subseq_len=5, init_iters=2, seed=11)
    a = run(params, obs, cfg)
    b = run(params, obs, cfg)
    np.testing.assert_array_equal(a.m, b.m)
    np.testing.assert_array_equal(a.V, b.V)
    for ea, eb in zip(a.eta, b.eta):
        np.testing.assert_array_equal(ea, eb)


def test_run_with_finetune_and_m_step():
    rng = np.random.default_rng(18)
    params = srnn.init_params(rng)
    _, obs = _toy_scene(rng, t_len=8)
    cfg = VemConfig(n_sources=2, n_iters=2, subseq_len=4, init_iters=1, seed=5,
                    fine_tune=True, finetune_steps=1, m_step=True)
    state = run(params, obs, cfg)
    assert np.all(np.isfinite(state.m))


def test_noiseless_separated_scene_high_iou():
    from mixtrack import metrics, trajgen

    rng = np.random.default_rng(19)
    cfg_t = trajgen.TrajGenConfig(T=12)
    truth, obs, _ = trajgen.gen_multisource_scene(rng, cfg_t, 3, 12, 0.0, 0.0)
    params = srnn.init_params(np.random.default_rng(20))
    state = run(params, obs, VemConfig(n_sources=3, n_iters=10, subseq_len=6,
                                       init_iters=5, seed=1))
    # with clean, always-present detections every source should lock on
    final_iou = np.zeros((12, 3))
    for t in range(12):
        for n in range(3):
            final_iou[t, n] = max(metrics.iou(state.m[t, n], truth[t, j]) for j in range(3))
    assert final_iou.min() > 0.9


def test_config_validation():
    with pytest.raises(ValueError):
        VemConfig(n_sources=0).validate()
    with pytest.raises(ValueError):
        VemConfig(n_sources=2, r_phi=0.0).validate()
    with pytest.raises(ValueError):
        VemConfig(n_sources=2, n_iters=0).validate()


def test_run_rejects_empty():
    params = srnn.init_params(np.random.default_rng(21))
    with pytest.raises(TrackingError):
        run(params, [], VemConfig(n_sources=1))
