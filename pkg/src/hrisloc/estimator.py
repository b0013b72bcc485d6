"""Three-stage maximum-likelihood channel estimator.

Stage 1 works on the HRIS observation (TOA, then joint AOA/AOD of the BS-HRIS
link), stage 2 on the UE observation (LOS TOA/AOD, LOS removal, then the
reflected TOA and HRIS departure angle), and stage 3 maps the channel
estimates to node states through :func:`hrisloc.scene.state_from_channel_params`.

Angle searches run over ``u`` in (-pi/2, pi/2); the steering vectors only see
``sin(u)``. HRIS-side angles are reported on the branch selected by
``EstimatorConfig.hris_rear_branch`` (``pi - u``) because the HRIS frame
convention places the BS and UE behind the local +y axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codebooks import as_slot_tensor, assemble_omega, assemble_xi
from .config import SystemConfig
from .errors import NoPeakError, NoSignalError, RankError, SensingDisabledError
from .scene import ChannelParams, SceneEstimate, state_from_channel_params, wrap_angle
from .waveform import ObservationSet, delay_steering, ula_steering


@dataclass(frozen=True)
class EstimatorConfig:
    N_F: int = 1024
    angle_grid_points: int = 2048
    newton_max_iters: int = 50
    newton_tol: float = 1e-10
    damping: float = 0.5
    hris_rear_branch: bool = True
    # 0 = single pass (LOS fitted to the raw UE signal); >0 alternates LOS and
    # reflected-path fits, each on the UE signal minus the other path
    los_refinement_passes: int = 10
    refinement_tol: float = 1e-12

    def __post_init__(self):
        if self.angle_grid_points < 2:
            raise ValueError("angle_grid_points must be >= 2")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")

    def angle_grid(self) -> np.ndarray:
        G = self.angle_grid_points
        return -np.pi / 2 + (np.arange(G) + 0.5) * np.pi / G


@dataclass
class ChannelEstimates(ChannelParams):
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# steering derivatives and the single-gain profiled objective


def ula_steering_derivs(nu: float, M: int):
    """a(nu), da/dnu, d2a/dnu2 for the phase-centred ULA."""
    k = np.arange(M) - (M - 1) / 2
    a = np.exp(-1j * np.pi * np.sin(nu) * k)
    d1 = -1j * np.pi * np.cos(nu) * k * a
    d2 = (1j * np.pi * np.sin(nu) * k - (np.pi * np.cos(nu) * k) ** 2) * a
    return a, d1, d2


def profiled_residual(b: np.ndarray, y: np.ndarray) -> float:
    """||y - b (b^+ y)||^2 / ||y||^2."""
    bb = np.vdot(b, b).real
    r = y - b * (np.vdot(b, y) / bb)
    return np.vdot(r, r).real / np.vdot(y, y).real


def profiled_derivs(b, db, d2b, y):
    """Gradient and Hessian of the normalised profiled residual.

    With s = b^H y, N = |s|^2, D = b^H b the residual is 1 - N / (D ||y||^2).
    ``db`` is (k, T) and ``d2b`` is (k, k, T).
    """
    yy = np.vdot(y, y).real
    s = np.vdot(b, y)
    N = abs(s) ** 2
    D = np.vdot(b, b).real
    ds = db.conj() @ y
    dN = 2 * np.real(np.conj(s) * ds)
    dD = 2 * np.real(db.conj() @ b)
    d2s = np.einsum("ijt,t->ij", d2b.conj(), y)
    d2N = 2 * np.real(np.outer(ds, ds.conj()) + np.conj(s) * d2s)
    d2D = 2 * np.real(db.conj() @ db.T + np.einsum("ijt,t->ij", d2b, b.conj()))
    J_grad = dN / D - N * dD / D**2
    J_hess = (d2N / D - (np.outer(dN, dD) + np.outer(dD, dN)) / D**2
              - N * d2D / D**2 + 2 * N * np.outer(dD, dD) / D**3)
    return -J_grad / yy, -J_hess / yy


def newton_refine(model, x0, y, est_cfg: EstimatorConfig):
    """Damped Newton on the profiled residual of ``model(x) -> (b, db, d2b)``.

    Indefinite Hessians are replaced by their absolute-eigenvalue version and
    steps are shrunk by ``damping`` until the residual does not increase.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    b, db, d2b = model(x)
    f = profiled_residual(b, y)
    it = 0
    for it in range(1, est_cfg.newton_max_iters + 1):
        g, H = profiled_derivs(b, db, d2b, y)
        if np.linalg.norm(g) < est_cfg.newton_tol:
            break
        w, V = np.linalg.eigh(H)
        w = np.maximum(np.abs(w), 1e-12 * max(np.abs(w).max(), 1e-300))
        step = -V @ ((V.T @ g) / w)
        t, accepted = 1.0, False
        while t > 1e-10:
            x_new = x + t * step
            b_new, db_new, d2b_new = model(x_new)
            f_new = profiled_residual(b_new, y)
            if f_new <= f:
                accepted = True
                break
            t *= est_cfg.damping
        if not accepted:
            break
        moved = np.linalg.norm(x_new - x)
        x, f, b, db, d2b = x_new, f_new, b_new, db_new, d2b_new
        if moved < 1e-15:
            break
    return x, f, it


def _fold(u: float) -> float:
    """Map an angle to (-pi/2, pi/2] keeping sin(u)."""
    return float(np.arcsin(np.clip(np.sin(u), -1.0, 1.0)))


def _hris_branch(u: float, est_cfg: EstimatorConfig) -> float:
    u = _fold(u)
    return wrap_angle(np.pi - u) if est_cfg.hris_rear_branch else u


def _check_signal(y: np.ndarray, stage: str):
    if not np.any(y) or not np.all(np.isfinite(y)):
        raise NoSignalError(f"{stage}: input carries no signal")


def _check_flat(res: np.ndarray, stage: str):
    if res.max() - res.min() <= 1e-12 * max(abs(res.max()), 1e-300):
        raise NoSignalError(f"{stage}: objective is flat over the angle grid")


# ---------------------------------------------------------------------------
# delay domain


def estimate_toa(Y: np.ndarray, N_F: int, delta_f: float, polish: bool = True, tau_init=None) -> float:
    """Delay of the strongest path from the time-integrated zero-padded periodogram.

    Grid peak, three-point quadratic interpolation of the log-periodogram, then
    Newton polishing of the continuous periodogram sum_t |d(tau)^H y_t|^2.
    ``tau_init`` skips the grid stage and only polishes.
    """
    N_c = Y.shape[0]
    if N_F < N_c:
        raise ValueError("N_F must be >= N_c")
    span = 1.0 / delta_f
    if tau_init is not None:
        return float(_polish_toa(Y, tau_init, delta_f, bin_width=span / N_F) % span)
    P = np.sum(np.abs(np.fft.ifft(Y, n=N_F, axis=0)) ** 2, axis=1)
    if not np.any(P > 0):
        raise NoPeakError("all-zero input has no delay peak")
    k = int(np.argmax(P))
    l, c, r = P[(k - 1) % N_F], P[k], P[(k + 1) % N_F]
    delta = 0.0
    if l > 0 and r > 0:
        ll, lc, lr = np.log(l), np.log(c), np.log(r)
        den = ll - 2 * lc + lr
        if den < 0:
            delta = 0.5 * (ll - lr) / den
    tau = ((k + delta) / (N_F * delta_f)) % span
    if polish:
        tau = _polish_toa(Y, tau, delta_f, bin_width=span / N_F)
    return float(tau % span)


def _periodogram_derivs(Y, tau, delta_f):
    w = 2 * np.pi * delta_f * np.arange(Y.shape[0])
    e = np.exp(1j * w * tau)
    z = Y.T @ e
    z1 = Y.T @ (1j * w * e)
    z2 = Y.T @ (-(w**2) * e)
    J = np.vdot(z, z).real
    J1 = 2 * np.real(np.vdot(z, z1))
    J2 = 2 * (np.vdot(z1, z1).real + np.real(np.vdot(z, z2)))
    return J, J1, J2


def _polish_toa(Y, tau0, delta_f, bin_width, max_iters=50):
    tau = tau0
    J, J1, J2 = _periodogram_derivs(Y, tau, delta_f)
    for _ in range(max_iters):
        step = -J1 / J2 if J2 < 0 else np.sign(J1) * 0.1 * bin_width
        step = float(np.clip(step, -bin_width, bin_width))
        t = 1.0
        while t > 1e-8:
            cand = _periodogram_derivs(Y, tau + t * step, delta_f)
            if cand[0] >= J:
                break
            t *= 0.5
        else:
            break
        tau_new = tau + t * step
        J, J1, J2 = cand
        if abs(tau_new - tau) <= 1e-24 + 1e-15 * abs(tau):
            tau = tau_new
            break
        tau = tau_new
    return tau


def collapse_delay(Y: np.ndarray, tau_hat: float, delta_f: float) -> np.ndarray:
    """De-rotate by d(-tau_hat) and sum over subcarriers: a length-T vector."""
    return Y.T @ np.conj(delay_steering(tau_hat, Y.shape[0], delta_f))


# ---------------------------------------------------------------------------
# stage 1: BS-HRIS link


def estimate_bs_hris_angles(y1_R, Omega, rho, P_t, N_c, est_cfg: EstimatorConfig, M_B: int):
    """(phi_RB_hat, theta_BR_hat, g_BR_hat, diagnostics) from the collapsed HRIS signal."""
    if rho <= 0:
        raise SensingDisabledError("rho = 0 leaves no power for HRIS sensing")
    if P_t <= 0:
        raise ValueError("P_t must be positive")
    y = np.asarray(y1_R, dtype=complex)
    _check_signal(y, "BS-HRIS")
    W = as_slot_tensor(Omega, M_B)  # (T, M_B, M_R)
    T, _, M_R = W.shape
    if T < M_B:
        raise RankError(f"T={T} slots cannot resolve the unstructured {M_B}-vector")
    grid = est_cfg.angle_grid()
    yy = np.vdot(y, y).real

    # coarse phi: residual after projecting onto range(Omega^T A_R(phi))
    A_R = ula_steering(grid, M_R)
    Bg = np.einsum("tmr,gr->gtm", W, A_R)
    Q, R = np.linalg.qr(Bg)
    diagR = np.abs(np.diagonal(R, axis1=1, axis2=2))
    if np.any(diagR.min(axis=1) <= 1e-10 * diagR.max(axis=1)):
        raise RankError("Omega^T A_R(phi) is rank deficient")
    res_phi = yy - np.sum(np.abs(np.einsum("gtm,t->gm", Q.conj(), y)) ** 2, axis=1)
    _check_flat(res_phi, "BS-HRIS phi")
    u_phi = grid[int(np.argmin(res_phi))]

    # coarse theta at fixed phi
    B_phi = W @ ula_steering(u_phi, M_R)  # (T, M_B)
    b_g = B_phi @ ula_steering(grid, M_B).T  # (T, G)
    res_th = yy - np.abs(b_g.conj().T @ y) ** 2 / np.sum(np.abs(b_g) ** 2, axis=0)
    i_th = int(np.argmin(res_th))
    u_th = grid[i_th]

    def model(x):
        aR, aR1, aR2 = ula_steering_derivs(x[0], M_R)
        aB, aB1, aB2 = ula_steering_derivs(x[1], M_B)
        P0, P1, P2 = W @ aR, W @ aR1, W @ aR2
        b = P0 @ aB
        db = np.stack([P1 @ aB, P0 @ aB1])
        d2b = np.stack([np.stack([P2 @ aB, P1 @ aB1]), np.stack([P1 @ aB1, P0 @ aB2])])
        return b, db, d2b

    x, f, iters = newton_refine(model, [u_phi, u_th], y, est_cfg)
    b = model(x)[0]
    beta = np.sqrt(rho * P_t) * N_c
    g = np.vdot(b, y) / (beta * np.vdot(b, b).real)
    diag = {"coarse_phi": u_phi, "coarse_theta": u_th, "grid_min_residual": res_th[i_th] / yy,
            "residual": f, "iterations": iters}
    return _hris_branch(x[0], est_cfg), _fold(x[1]), complex(g), diag


# ---------------------------------------------------------------------------
# stage 2: BS-UE LOS, LOS removal, BS-HRIS-UE path


def estimate_theta_bu(y0_U, F, P_t, N_c, est_cfg: EstimatorConfig, init=None):
    """(theta_BU_hat, g_BU_hat, diagnostics) from the collapsed UE signal.

    ``init`` replaces the coarse grid search by a Newton start point.
    """
    if P_t <= 0:
        raise ValueError("P_t must be positive")
    y = np.asarray(y0_U, dtype=complex)
    _check_signal(y, "BS-UE")
    M_B = F.shape[0]
    grid = est_cfg.angle_grid()
    yy = np.vdot(y, y).real
    if init is None:
        b_g = ula_steering(grid, M_B) @ F  # (G, T)
        res = yy - np.abs(b_g.conj() @ y) ** 2 / np.sum(np.abs(b_g) ** 2, axis=1)
        _check_flat(res, "BS-UE theta")
        i0 = int(np.argmin(res))
        u0, grid_min = grid[i0], res[i0] / yy
    else:
        u0, grid_min = float(init), np.nan

    def model(x):
        a, a1, a2 = ula_steering_derivs(x[0], M_B)
        return a @ F, (a1 @ F)[None, :], (a2 @ F)[None, None, :]

    x, f, iters = newton_refine(model, [u0], y, est_cfg)
    b = model(x)[0]
    g = np.vdot(b, y) / (np.sqrt(P_t) * N_c * np.vdot(b, b).real)
    diag = {"coarse_theta": u0, "grid_min_residual": grid_min, "residual": f, "iterations": iters}
    return _fold(x[0]), complex(g), diag


def subtract_los(Y_U, theta_BU_hat, g_BU_hat, tau_BU_hat, F, P_t, delta_f):
    N_c = Y_U.shape[0]
    a_B = ula_steering(theta_BU_hat, F.shape[0])
    los = g_BU_hat * np.sqrt(P_t) * np.outer(delay_steering(tau_BU_hat, N_c, delta_f), a_B @ F)
    return Y_U - los


def estimate_theta_ru(y1_U, Xi, theta_BR_hat, phi_RB_hat, est_cfg: EstimatorConfig, M_B: int, init=None):
    """(theta_RU_hat, g_tilde_hat, diagnostics) from the collapsed LOS-free UE signal."""
    y = np.asarray(y1_U, dtype=complex)
    _check_signal(y, "HRIS-UE")
    W = as_slot_tensor(Xi, M_B)
    M_R = W.shape[2]
    grid = est_cfg.angle_grid()
    yy = np.vdot(y, y).real
    a_B = ula_steering(theta_BR_hat, M_B)
    a_RB = ula_steering(phi_RB_hat, M_R)
    Wb = np.einsum("tmr,m->tr", W, a_B) * a_RB  # (T, M_R)
    if init is None:
        b_g = Wb @ ula_steering(grid, M_R).T
        res = yy - np.abs(b_g.conj().T @ y) ** 2 / np.sum(np.abs(b_g) ** 2, axis=0)
        _check_flat(res, "HRIS-UE theta")
        i0 = int(np.argmin(res))
        u0, grid_min = grid[i0], res[i0] / yy
    else:
        u0, grid_min = _fold(init), np.nan

    def model(x):
        a, a1, a2 = ula_steering_derivs(x[0], M_R)
        return Wb @ a, (Wb @ a1)[None, :], (Wb @ a2)[None, None, :]

    x, f, iters = newton_refine(model, [u0], y, est_cfg)
    b = model(x)[0]
    g_tilde = np.vdot(b, y) / np.vdot(b, b).real
    diag = {"coarse_theta": u0, "grid_min_residual": grid_min, "residual": f, "iterations": iters}
    return _hris_branch(x[0], est_cfg), complex(g_tilde), diag


# ---------------------------------------------------------------------------


def reflected_model(theta_RU, g_tilde, tau_BRU, theta_BR, phi_RB, Xi, M_B, N_c, delta_f):
    """Reconstructed BS-HRIS-UE contribution to the UE signal, (N_c, T)."""
    W = as_slot_tensor(Xi, M_B)
    M_R = W.shape[2]
    a = ula_steering(theta_RU, M_R) * ula_steering(phi_RB, M_R)
    b = np.einsum("tmr,m,r->t", W, ula_steering(theta_BR, M_B), a)
    return (g_tilde / N_c) * np.outer(delay_steering(tau_BRU, N_c, delta_f), b)


def estimate_channel(obs: ObservationSet, cfg: SystemConfig, est_cfg: EstimatorConfig) -> ChannelEstimates:
    cb = obs.codebooks
    P_t, N_c, df, N_F, M_B = cfg.P_t, cfg.N_c, cfg.delta_f, est_cfg.N_F, cfg.M_B
    diag = {}

    tau_BR = estimate_toa(obs.Y_R, N_F, df)
    y1_R = collapse_delay(obs.Y_R, tau_BR, df)
    Omega = assemble_omega(cb.F, cb.C)
    phi_RB, theta_BR, g_BR, diag["bs_hris"] = estimate_bs_hris_angles(
        y1_R, Omega, cfg.rho, P_t, N_c, est_cfg, M_B)

    tau_BU = estimate_toa(obs.Y_U, N_F, df)
    y0_U = collapse_delay(obs.Y_U, tau_BU, df)
    theta_BU, g_BU, diag["bs_ue"] = estimate_theta_bu(y0_U, cb.F, P_t, N_c, est_cfg)

    if cfg.rho >= 1:
        raise NoSignalError("rho = 1 leaves no reflected power at the UE")
    Xi = assemble_xi(cb.F, cb.Gamma)
    Y1_U = subtract_los(obs.Y_U, theta_BU, g_BU, tau_BU, cb.F, P_t, df)
    tau_BRU = estimate_toa(Y1_U, N_F, df)
    y1_U = collapse_delay(Y1_U, tau_BRU, df)
    theta_RU, g_tilde, diag["hris_ue"] = estimate_theta_ru(y1_U, Xi, theta_BR, phi_RB, est_cfg, M_B)

    passes = 0
    for passes in range(1, est_cfg.los_refinement_passes + 1):
        prev = np.array([tau_BU, theta_BU, tau_BRU, theta_RU])
        Y0_U = obs.Y_U - reflected_model(theta_RU, g_tilde, tau_BRU, theta_BR, phi_RB, Xi, M_B, N_c, df)
        tau_BU = estimate_toa(Y0_U, N_F, df, tau_init=tau_BU)
        theta_BU, g_BU, diag["bs_ue"] = estimate_theta_bu(
            collapse_delay(Y0_U, tau_BU, df), cb.F, P_t, N_c, est_cfg, init=theta_BU)
        Y1_U = subtract_los(obs.Y_U, theta_BU, g_BU, tau_BU, cb.F, P_t, df)
        tau_BRU = estimate_toa(Y1_U, N_F, df, tau_init=tau_BRU)
        theta_RU, g_tilde, diag["hris_ue"] = estimate_theta_ru(
            collapse_delay(Y1_U, tau_BRU, df), Xi, theta_BR, phi_RB, est_cfg, M_B, init=theta_RU)
        change = np.abs(np.array([tau_BU, theta_BU, tau_BRU, theta_RU]) - prev)
        scale = np.array([1 / (N_F * df), 1.0, 1 / (N_F * df), 1.0])
        if np.all(change <= est_cfg.refinement_tol * scale):
            break
    diag["refinement_passes"] = passes
    diag["los_residual_energy"] = float(np.sum(np.abs(Y1_U) ** 2))
    g_BRU = g_tilde / (np.sqrt((1 - cfg.rho) * P_t) * N_c)

    return ChannelEstimates(tau_BR, tau_BU, tau_BRU, theta_BR, theta_BU, theta_RU, phi_RB,
                            g_BR, g_BU, complex(g_BRU), diagnostics=diag)


def run_pipeline(obs: ObservationSet, cfg: SystemConfig, est_cfg: EstimatorConfig, p_B):
    est = estimate_channel(obs, cfg, est_cfg)
    return est, state_from_channel_params(est, p_B, cfg.c)
