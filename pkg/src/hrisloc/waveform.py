"""Received-signal synthesis at the HRIS RX chain and at the UE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebooks import CodebookSet
from .config import SystemConfig, dbm_to_mw
from .errors import DimensionError
from .scene import ChannelParams, SceneState, channel_params_from_state, direction_and_distance, free_space_magnitudes


def delay_steering(tau: float, N_c: int, delta_f: float) -> np.ndarray:
    n = np.arange(N_c)
    return np.exp(-2j * np.pi * n * delta_f * tau)


def ula_steering(nu, M: int) -> np.ndarray:
    """Phase-centred ULA response; vectorises over an array of angles (last axis = elements)."""
    k = np.arange(M) - (M - 1) / 2
    s = np.sin(np.asarray(nu, dtype=float))[..., None]
    return np.exp(-1j * np.pi * s * k)


def path_gains(scene: SceneState, cfg: SystemConfig, rng):
    """Complex gains g_i = |g_i| exp(-j phi_i) with phi_i ~ U[0, 2 pi)."""
    mags = np.array(free_space_magnitudes(scene, cfg.wavelength))
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    g = mags * np.exp(-1j * phases)
    return complex(g[0]), complex(g[1]), complex(g[2])


def noise_variance(cfg: SystemConfig) -> float:
    """Per-entry noise variance in mW: N0 * n_f * N_c * delta_f."""
    return dbm_to_mw(cfg.N0_dBm_per_Hz + cfg.noise_figure_dB) * cfg.N_c * cfg.delta_f


@dataclass(frozen=True)
class ScatterPoint:
    position: np.ndarray
    rcs: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        if self.rcs <= 0:
            raise ValueError("radar cross section must be positive")


def random_scatter_points(n: int, rng, x_range=(8.0, 13.0), y: float = 5.0, rcs: float = 0.1) -> list[ScatterPoint]:
    xs = rng.uniform(*x_range, size=n)
    return [ScatterPoint([x, y], rcs) for x in xs]


@dataclass(frozen=True, eq=False)
class ObservationSet:
    Y_R: np.ndarray
    Y_U: np.ndarray
    codebooks: CodebookSet


def _check_dims(cfg: SystemConfig, cb: CodebookSet):
    want = {"F": (cfg.M_B, cfg.T), "Gamma": (cfg.M_R, cfg.T), "C": (cfg.M_R, cfg.T)}
    for name, shape in want.items():
        got = getattr(cb, name).shape
        if got != shape:
            raise DimensionError(f"codebook {name} has shape {got}, expected {shape}")


def hris_signal(params: ChannelParams, cfg: SystemConfig, cb: CodebookSet) -> np.ndarray:
    """Noiseless sensed signal at the HRIS RX chain, (N_c, T)."""
    a_B = ula_steering(params.theta_BR, cfg.M_B)
    a_R = ula_steering(params.phi_RB, cfg.M_R)
    slot = (cb.C.T @ a_R) * (a_B @ cb.F)
    d = delay_steering(params.tau_BR, cfg.N_c, cfg.delta_f)
    return params.g_BR * np.sqrt(cfg.rho * cfg.P_t) * np.outer(d, slot)


def los_signal(params: ChannelParams, cfg: SystemConfig, cb: CodebookSet) -> np.ndarray:
    a_B = ula_steering(params.theta_BU, cfg.M_B)
    d = delay_steering(params.tau_BU, cfg.N_c, cfg.delta_f)
    return params.g_BU * np.sqrt(cfg.P_t) * np.outer(d, a_B @ cb.F)


def reflected_signal(params: ChannelParams, cfg: SystemConfig, cb: CodebookSet) -> np.ndarray:
    a_B = ula_steering(params.theta_BR, cfg.M_B)
    a_RB = ula_steering(params.phi_RB, cfg.M_R)
    a_RU = ula_steering(params.theta_RU, cfg.M_R)
    slot = (cb.Gamma.T @ (a_RU * a_RB)) * (a_B @ cb.F)
    d = delay_steering(params.tau_BRU, cfg.N_c, cfg.delta_f)
    return params.g_BRU * np.sqrt((1 - cfg.rho) * cfg.P_t) * np.outer(d, slot)


def scatter_gain_magnitude(sp: ScatterPoint, p_B, p_U, wavelength: float) -> float:
    d1 = np.linalg.norm(sp.position - p_B)
    d2 = np.linalg.norm(p_U - sp.position)
    return wavelength * np.sqrt(sp.rcs) / ((4 * np.pi) ** 1.5 * d1 * d2)


def clutter_signal(scene: SceneState, cfg: SystemConfig, cb: CodebookSet, scatter_points, phases) -> np.ndarray:
    """Sum of uncontrolled BS-SP-UE paths, (N_c, T)."""
    Y = np.zeros((cfg.N_c, cfg.T), dtype=complex)
    for sp, ph in zip(scatter_points, phases):
        theta, d1 = direction_and_distance(scene.p_B, sp.position)
        _, d2 = direction_and_distance(sp.position, scene.p_U)
        tau = (d1 + d2) / cfg.c + scene.b_U
        g = scatter_gain_magnitude(sp, scene.p_B, scene.p_U, cfg.wavelength) * np.exp(-1j * ph)
        a_B = ula_steering(theta, cfg.M_B)
        Y += g * np.sqrt(cfg.P_t) * np.outer(delay_steering(tau, cfg.N_c, cfg.delta_f), a_B @ cb.F)
    return Y


def complex_noise(shape, sigma2: float, rng) -> np.ndarray:
    return np.sqrt(sigma2 / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synth_observations(
    scene: SceneState,
    cfg: SystemConfig,
    codebooks: CodebookSet,
    scatter_points=(),
    rng=None,
    noiseless: bool = False,
    params: ChannelParams | None = None,
) -> ObservationSet:
    """Draw gains (unless ``params`` is given), clutter phases and noise, in that order."""
    _check_dims(cfg, codebooks)
    if rng is None:
        rng = np.random.default_rng()
    if params is None:
        params = channel_params_from_state(scene, cfg, gains=path_gains(scene, cfg, rng))
    sp_phases = rng.uniform(0.0, 2 * np.pi, size=len(scatter_points))

    Y_R = hris_signal(params, cfg, codebooks)
    Y_U = los_signal(params, cfg, codebooks) + reflected_signal(params, cfg, codebooks)
    if len(scatter_points):
        Y_U = Y_U + clutter_signal(scene, cfg, codebooks, scatter_points, sp_phases)
    if not noiseless:
        s2 = noise_variance(cfg)
        Y_R = Y_R + complex_noise(Y_R.shape, s2, rng)
        Y_U = Y_U + complex_noise(Y_U.shape, s2, rng)
    return ObservationSet(Y_R=Y_R, Y_U=Y_U, codebooks=codebooks)
