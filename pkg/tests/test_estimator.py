import numpy as np
import pytest

from hrisloc.codebooks import assemble_omega, assemble_xi, build_codebooks
from hrisloc.config import SystemConfig
from hrisloc.errors import NoPeakError, NoSignalError, RankError, SensingDisabledError
from hrisloc.estimator import (
    EstimatorConfig,
    collapse_delay,
    estimate_bs_hris_angles,
    estimate_channel,
    estimate_theta_bu,
    estimate_theta_ru,
    estimate_toa,
    newton_refine,
    profiled_derivs,
    profiled_residual,
    run_pipeline,
    subtract_los,
    ula_steering_derivs,
)
from hrisloc.scene import channel_params_from_state, reference_scene, wrap_angle
from hrisloc.waveform import (
    complex_noise,
    delay_steering,
    hris_signal,
    los_signal,
    reflected_signal,
    synth_observations,
    ula_steering,
)

EST = EstimatorConfig()
DF = 120e3


def dirichlet(N, x):
    """|sum_n exp(j 2 pi n x)| for n = 0..N-1."""
    return abs(np.sin(np.pi * N * x) / np.sin(np.pi * x)) if x != 0 else N


@pytest.fixture
def truth(cfg, scene, gains):
    return channel_params_from_state(scene, cfg, gains=gains)


# ---------------------------------------------------------------------------
# TOA and delay collapse


def test_toa_on_grid_exact():
    tau = 37 / (1024 * DF)
    Y = np.outer(delay_steering(tau, 100, DF), np.ones(8))
    assert abs(estimate_toa(Y, 1024, DF) - tau) < 1e-15
    assert abs(estimate_toa(Y, 1024, DF, polish=False) - tau) < 1e-15


def test_toa_reference_grid_and_refined(cfg, truth, codebooks):
    Y = hris_signal(truth, cfg, codebooks)
    bin_w = 1 / (1024 * DF)
    P = np.sum(np.abs(np.fft.ifft(Y, n=1024, axis=0)) ** 2, axis=1)
    assert abs(np.argmax(P) * bin_w - truth.tau_BR) < bin_w / 2
    coarse = estimate_toa(Y, 1024, DF, polish=False)
    assert abs(coarse - truth.tau_BR) < 0.1 * bin_w
    assert abs(estimate_toa(Y, 1024, DF) - truth.tau_BR) < 1e-6 * bin_w


def test_toa_matches_dense_oracle():
    rng = np.random.default_rng(0)
    tau = 123.4567e-9
    Y = np.outer(delay_steering(tau, 100, DF), rng.normal(size=6) + 1j * rng.normal(size=6))
    Y = Y + complex_noise(Y.shape, 0.05, rng)
    dense = np.linspace(tau - 2e-9, tau + 2e-9, 40001)
    E = np.exp(2j * np.pi * DF * np.outer(dense, np.arange(100)))
    ref = dense[np.argmax(np.sum(np.abs(E @ Y) ** 2, axis=1))]
    assert abs(estimate_toa(Y, 1024, DF) - ref) <= 1.5 * (dense[1] - dense[0])


def test_toa_phase_invariant():
    rng = np.random.default_rng(1)
    tau = 51.3e-9
    d = delay_steering(tau, 100, DF)
    a = estimate_toa(np.outer(d, np.exp(1j * rng.uniform(0, 6.3, 10))), 1024, DF)
    b = estimate_toa(np.outer(d, np.ones(10)), 1024, DF)
    assert a == pytest.approx(b, abs=1e-18)


def test_toa_range_and_errors():
    Y = np.outer(delay_steering(8.3e-6, 100, DF), np.ones(3))
    tau = estimate_toa(Y, 1024, DF)
    assert 0 <= tau < 1 / DF
    with pytest.raises(NoPeakError):
        estimate_toa(np.zeros((100, 4)), 1024, DF)
    with pytest.raises(ValueError):
        estimate_toa(Y, 64, DF)


def test_collapse_matched():
    x = np.array([1 + 2j, -0.5j, 3.0])
    tau = 40e-9
    y = collapse_delay(np.outer(delay_steering(tau, 100, DF), x), tau, DF)
    assert np.allclose(y, 100 * x, rtol=1e-12)


@pytest.mark.parametrize("dtau", [1e-9, 3.3e-9, 20e-9])
def test_collapse_dirichlet_attenuation(dtau):
    x = np.array([1.0, 2.0j])
    tau = 40e-9
    y = collapse_delay(np.outer(delay_steering(tau, 100, DF), x), tau + dtau, DF)
    assert np.allclose(np.abs(y), np.abs(x) * dirichlet(100, DF * dtau), rtol=1e-9)


def test_collapse_noise_variance():
    s2 = 2.0
    Y = complex_noise((100, 20000), s2, np.random.default_rng(0))
    y = collapse_delay(Y, 33e-9, DF)
    assert np.mean(np.abs(y) ** 2) == pytest.approx(100 * s2, rel=0.03)


# ---------------------------------------------------------------------------
# profiled objective and Newton


def test_profiled_derivs_match_finite_differences():
    rng = np.random.default_rng(3)
    M, T = 9, 12
    W = rng.normal(size=(T, M)) + 1j * rng.normal(size=(T, M))
    y = W @ ula_steering(0.3, M) * (0.7 - 0.2j) + 0.1 * (rng.normal(size=T) + 1j * rng.normal(size=T))

    def model(x):
        a, a1, a2 = ula_steering_derivs(x[0], M)
        return W @ a, (W @ a1)[None, :], (W @ a2)[None, None, :]

    x0 = np.array([0.25])
    g, H = profiled_derivs(*model(x0), y)
    h = 1e-5
    f = [profiled_residual(model(x0 + s)[0], y) for s in (-h, 0, h)]
    assert g[0] == pytest.approx((f[2] - f[0]) / (2 * h), rel=1e-6)
    assert H[0, 0] == pytest.approx((f[2] - 2 * f[1] + f[0]) / h**2, rel=1e-4)


def test_ula_steering_derivs():
    nu, h = 0.4, 1e-6
    a, a1, a2 = ula_steering_derivs(nu, 7)
    assert np.allclose(a, ula_steering(nu, 7))
    assert np.allclose(a1, (ula_steering(nu + h, 7) - ula_steering(nu - h, 7)) / (2 * h), atol=1e-8)
    assert np.allclose(a2, (ula_steering_derivs(nu + h, 7)[1] - ula_steering_derivs(nu - h, 7)[1]) / (2 * h),
                       atol=1e-7)


def test_newton_never_increases_residual():
    rng = np.random.default_rng(5)
    M, T = 17, 32
    F = rng.normal(size=(M, T)) + 1j * rng.normal(size=(M, T))

    def model(x):
        a, a1, a2 = ula_steering_derivs(x[0], M)
        return a @ F, (a1 @ F)[None, :], (a2 @ F)[None, None, :]

    y = model([0.5])[0] + 0.5 * (rng.normal(size=T) + 1j * rng.normal(size=T))
    for start in (0.3, 0.45, 0.6, -1.0):
        f0 = profiled_residual(model([start])[0], y)
        x, f, _ = newton_refine(model, [start], y, EST)
        assert f <= f0


# ---------------------------------------------------------------------------
# stage 1


def test_bs_hris_angles_noiseless(cfg, truth, codebooks):
    y = collapse_delay(hris_signal(truth, cfg, codebooks), truth.tau_BR, DF)
    Om = assemble_omega(codebooks.F, codebooks.C)
    phi, theta, g, diag = estimate_bs_hris_angles(y, Om, cfg.rho, cfg.P_t, cfg.N_c, EST, cfg.M_B)
    assert abs(wrap_angle(phi - truth.phi_RB)) < 1e-6
    assert abs(theta - truth.theta_BR) < 1e-6
    assert abs(g - truth.g_BR) < 1e-6 * abs(truth.g_BR)
    step = np.pi / EST.angle_grid_points
    assert abs(np.sin(diag["coarse_phi"]) - np.sin(truth.phi_RB)) < np.sin(step) * 1.01
    assert abs(diag["coarse_theta"] - truth.theta_BR) <= step
    assert diag["residual"] <= diag["grid_min_residual"]


def test_bs_hris_angles_errors(cfg, codebooks):
    Om = assemble_omega(codebooks.F, codebooks.C)
    with pytest.raises(NoSignalError):
        estimate_bs_hris_angles(np.zeros(32), Om, 0.5, 1.0, 100, EST, cfg.M_B)
    with pytest.raises(SensingDisabledError):
        estimate_bs_hris_angles(np.ones(32), Om, 0.0, 1.0, 100, EST, cfg.M_B)
    small = build_codebooks(SystemConfig(T=8), np.random.default_rng(0))
    with pytest.raises(RankError):
        estimate_bs_hris_angles(np.ones(8), assemble_omega(small.F, small.C), 0.5, 1.0, 100, EST, cfg.M_B)


# ---------------------------------------------------------------------------
# stage 2


def test_theta_bu_los_only(cfg, truth, codebooks):
    y = collapse_delay(los_signal(truth, cfg, codebooks), truth.tau_BU, DF)
    theta, g, diag = estimate_theta_bu(y, codebooks.F, cfg.P_t, cfg.N_c, EST)
    assert abs(theta - np.pi / 4) < 1e-8
    assert abs(g - truth.g_BU) < 1e-8 * abs(truth.g_BU)
    assert diag["residual"] <= diag["grid_min_residual"]


def test_theta_bu_broadside_gain_maximal(cfg, codebooks):
    y = ula_steering(0.0, cfg.M_B) @ codebooks.F
    grid = EST.angle_grid()
    gains = np.abs((ula_steering(grid, cfg.M_B) @ codebooks.F).conj() @ y)
    assert abs(grid[np.argmax(gains)]) <= np.pi / EST.angle_grid_points
    theta, _, _ = estimate_theta_bu(y, codebooks.F, 1.0, 1, EST)
    assert abs(theta) < 1e-9


def test_single_pass_los_bias_grows_with_reflected_power(scene, gains, codebooks):
    single = EstimatorConfig(los_refinement_passes=0)
    bias = []
    for rho in (0.8, 0.5, 0.2):
        cfg = SystemConfig(rho=rho)
        p = channel_params_from_state(scene, cfg, gains=gains)
        obs = synth_observations(scene, cfg, codebooks, rng=np.random.default_rng(0), noiseless=True, params=p)
        est = estimate_channel(obs, cfg, single)
        bias.append(abs(est.theta_BU - p.theta_BU))
        refl = np.linalg.norm(reflected_signal(p, cfg, codebooks))
        los = np.linalg.norm(los_signal(p, cfg, codebooks))
        assert bias[-1] < refl / los
    assert bias[0] < bias[1] < bias[2]


def test_subtract_los_exact(cfg, truth, codebooks):
    los = los_signal(truth, cfg, codebooks)
    refl = reflected_signal(truth, cfg, codebooks)
    args = (truth.theta_BU, truth.g_BU, truth.tau_BU, codebooks.F, cfg.P_t, DF)
    assert np.allclose(subtract_los(los, *args), 0, atol=1e-15 * np.abs(los).max())
    assert np.allclose(subtract_los(los + refl, *args), refl, rtol=0, atol=1e-12 * np.abs(refl).max())


def test_subtract_los_delay_mismatch_energy(cfg, truth, codebooks):
    los = los_signal(truth, cfg, codebooks)
    dtau = 2e-9
    # least-squares gain refit at the wrong delay, as the estimator does
    b = np.outer(delay_steering(truth.tau_BU + dtau, cfg.N_c, DF), ula_steering(truth.theta_BU, cfg.M_B) @ codebooks.F)
    g = np.vdot(b, los) / np.vdot(b, b).real / np.sqrt(cfg.P_t)
    res = subtract_los(los, truth.theta_BU, g, truth.tau_BU + dtau, codebooks.F, cfg.P_t, DF)
    expected = np.sum(np.abs(los) ** 2) * (1 - dirichlet(cfg.N_c, DF * dtau) ** 2 / cfg.N_c**2)
    assert np.sum(np.abs(res) ** 2) == pytest.approx(expected, rel=1e-9)


def _reflected_only(cfg, truth, codebooks):
    return collapse_delay(reflected_signal(truth, cfg, codebooks), truth.tau_BRU, DF)


def test_theta_ru_exact_inputs(cfg, truth, codebooks):
    Xi = assemble_xi(codebooks.F, codebooks.Gamma)
    y = _reflected_only(cfg, truth, codebooks)
    theta, g_t, diag = estimate_theta_ru(y, Xi, truth.theta_BR, truth.phi_RB, EST, cfg.M_B)
    assert abs(wrap_angle(theta - truth.theta_RU)) < 1e-6
    expected = truth.g_BRU * np.sqrt((1 - cfg.rho) * cfg.P_t) * cfg.N_c
    assert abs(g_t - expected) < 1e-6 * abs(expected)
    assert diag["residual"] <= diag["grid_min_residual"]


def test_theta_ru_error_propagation(cfg, truth, codebooks):
    Xi = assemble_xi(codebooks.F, codebooks.Gamma)
    y = _reflected_only(cfg, truth, codebooks)
    good, _, _ = estimate_theta_ru(y, Xi, truth.theta_BR, truth.phi_RB, EST, cfg.M_B)
    bad, _, _ = estimate_theta_ru(y, Xi, truth.theta_BR, truth.phi_RB + 0.1, EST, cfg.M_B)
    assert abs(wrap_angle(bad - truth.theta_RU)) > abs(wrap_angle(good - truth.theta_RU))


def test_theta_ru_no_signal(cfg, codebooks):
    Xi = assemble_xi(codebooks.F, codebooks.Gamma)
    with pytest.raises(NoSignalError):
        estimate_theta_ru(np.zeros(32), Xi, 0.1, 2.0, EST, cfg.M_B)


# ---------------------------------------------------------------------------
# full pipeline


def test_pipeline_noiseless_exact(cfg, scene, truth, codebooks):
    obs = synth_observations(scene, cfg, codebooks, noiseless=True, params=truth)
    est, se = run_pipeline(obs, cfg, EST, scene.p_B)
    err = est.eta() - truth.eta()
    err[3:] = wrap_angle(err[3:])
    assert np.all(np.abs(err[:3]) < 1e-15)
    assert np.all(np.abs(err[3:]) < 1e-9)
    assert np.linalg.norm(se.p_R_hat - scene.p_R) < 1e-6
    assert np.linalg.norm(se.p_U_hat - scene.p_U) < 1e-6
    assert abs(se.alpha_hat - scene.alpha) < 1e-9
    assert abs(se.b_R_hat - scene.b_R) < 1e-15 and abs(se.b_U_hat - scene.b_U) < 1e-15
    for key in ("bs_hris", "bs_ue", "hris_ue", "refinement_passes"):
        assert key in est.diagnostics


def test_pipeline_ranges_and_determinism(cfg, scene, truth, codebooks):
    obs = synth_observations(scene, cfg, codebooks, rng=np.random.default_rng(4), params=truth)
    a, sa = run_pipeline(obs, cfg, EST, scene.p_B)
    b, sb = run_pipeline(obs, cfg, EST, scene.p_B)
    assert np.array_equal(a.eta(), b.eta()) and np.array_equal(sa.vector(), sb.vector())
    for tau in (a.tau_BR, a.tau_BU, a.tau_BRU):
        assert 0 <= tau < 1 / cfg.delta_f
    for th in (a.theta_BR, a.theta_BU):
        assert -np.pi / 2 < th < np.pi / 2


def test_pipeline_power_split_endpoints(scene, gains, codebooks):
    for rho, err in ((0.0, SensingDisabledError), (1.0, NoSignalError)):
        cfg = SystemConfig(rho=rho)
        p = channel_params_from_state(scene, cfg, gains=gains)
        obs = synth_observations(scene, cfg, codebooks, rng=np.random.default_rng(0), params=p)
        with pytest.raises(err):
            run_pipeline(obs, cfg, EST, scene.p_B)


def test_estimator_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(angle_grid_points=1)
    with pytest.raises(ValueError):
        EstimatorConfig(damping=1.0)
    g = EstimatorConfig(angle_grid_points=4).angle_grid()
    assert np.allclose(g, [-3 * np.pi / 8, -np.pi / 8, np.pi / 8, 3 * np.pi / 8])
