"""Fisher information and Cramer-Rao bounds for the clutter-free model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebooks import CodebookSet
from .config import SystemConfig
from .errors import IllPosedError, NumericError, UnidentifiableError
from .scene import ETA_NAMES, ChannelParams, SceneState, channel_params_from_state, state_jacobian
from .waveform import hris_signal, los_signal, noise_variance, reflected_signal

GAIN_NAMES = ("re_g_BR", "im_g_BR", "re_g_BU", "im_g_BU", "re_g_BRU", "im_g_BRU")
ZETA_NAMES = ETA_NAMES + GAIN_NAMES
# central-difference steps: delays (s), angles (rad), gain coordinates
FD_STEPS = np.array([1e-13] * 3 + [1e-7] * 4 + [1e-6] * 6)


def zeta_vector(params: ChannelParams) -> np.ndarray:
    g = params.gains()
    return np.concatenate([params.eta(), np.column_stack([g.real, g.imag]).ravel()])


def params_from_zeta(zeta) -> ChannelParams:
    z = np.asarray(zeta, dtype=float)
    g = z[7::2] + 1j * z[8::2]
    return ChannelParams.from_vectors(z[:7], g)


def _components(zeta, cfg, cb):
    p = params_from_zeta(zeta)
    return hris_signal(p, cfg, cb).ravel(), los_signal(p, cfg, cb).ravel(), reflected_signal(p, cfg, cb).ravel()


def mean_signal(zeta, cfg: SystemConfig, cb: CodebookSet) -> np.ndarray:
    """Noiseless [vec(Y_R); vec(Y_U)] without clutter."""
    y_R, los, refl = _components(zeta, cfg, cb)
    return np.concatenate([y_R, los + refl])


def signal_jacobian(zeta, cfg: SystemConfig, cb: CodebookSet) -> np.ndarray:
    """d mean_signal / d zeta by central differences.

    Each path is differenced on its own before the LOS and reflected parts are
    summed, so the weak reflected path does not lose digits to cancellation
    against the LOS term.
    """
    zeta = np.asarray(zeta, dtype=float)
    cols = []
    for i, h in enumerate(FD_STEPS):
        e = np.zeros_like(zeta)
        e[i] = h
        plus, minus = _components(zeta + e, cfg, cb), _components(zeta - e, cfg, cb)
        d = [(a - b) / (2 * h) for a, b in zip(plus, minus)]
        cols.append(np.concatenate([d[0], d[1] + d[2]]))
    return np.column_stack(cols)


def fim_channel(scene: SceneState, cfg: SystemConfig, codebooks: CodebookSet, gains, sigma2: float | None = None):
    """13x13 Fisher information over [eta_ch, Re/Im of g_BR, g_BU, g_BRU]."""
    params = channel_params_from_state(scene, cfg, gains=gains)
    return fim_from_params(params, cfg, codebooks, sigma2)


def fim_from_params(params: ChannelParams, cfg: SystemConfig, codebooks: CodebookSet, sigma2: float | None = None):
    if sigma2 is None:
        sigma2 = noise_variance(cfg)
    if sigma2 <= 0:
        raise ValueError("noise variance must be positive")
    D = signal_jacobian(zeta_vector(params), cfg, codebooks)
    if not np.all(np.isfinite(D)):
        raise NumericError("non-finite signal derivative")
    fim = (2.0 / sigma2) * np.real(D.conj().T @ D)
    return 0.5 * (fim + fim.T)


def _safe_inverse(J: np.ndarray, names) -> np.ndarray:
    d = np.sqrt(np.abs(np.diag(J)))
    dead = [n for n, v in zip(names, d) if v == 0]
    if dead:
        raise IllPosedError(f"no information on {', '.join(dead)}", parameters=dead)
    Js = J / np.outer(d, d)
    w, V = np.linalg.eigh(Js)
    if w.min() <= 1e-12 * w.max():
        weight = np.abs(V[:, w <= 1e-12 * w.max()]).max(axis=1)
        affected = [n for n, v in zip(names, weight) if v > 1e-3]
        raise IllPosedError(f"singular Fisher information (affects {', '.join(affected)})", parameters=affected)
    inv = (V / w) @ V.T
    return 0.5 * (inv + inv.T) / np.outer(d, d)


def crb_channel(fim: np.ndarray):
    """(bounds, crb): sqrt of the CRB diagonal per parameter, and the CRB matrix."""
    crb = _safe_inverse(fim, ZETA_NAMES[: fim.shape[0]])
    return {n: float(np.sqrt(crb[i, i])) for i, n in enumerate(ZETA_NAMES[: fim.shape[0]])}, crb


def efim_eta(fim: np.ndarray) -> np.ndarray:
    """Equivalent information on eta_ch with the gains marginalised (Schur complement)."""
    A, B, C = fim[:7, :7], fim[:7, 7:], fim[7:, 7:]
    Cinv = _safe_inverse(C, GAIN_NAMES)
    J = A - B @ Cinv @ B.T
    return 0.5 * (J + J.T)


@dataclass
class BoundReport:
    teb: dict  # delay bounds, s
    angle_bounds: dict  # AOD/AOA bounds, rad
    peb_R: float
    peb_U: float
    oeb: float
    b_R: float
    b_U: float
    crb_eta: np.ndarray
    crb_state: np.ndarray

    def as_dict(self) -> dict:
        """Bounds keyed like the RMSE columns of the benchmark tables."""
        out = {**self.teb, **self.angle_bounds}
        out.update(p_R=self.peb_R, p_U=self.peb_U, alpha=self.oeb, b_R=self.b_R, b_U=self.b_U)
        return out


def crb_state(fim: np.ndarray, scene: SceneState, c: float = 3e8) -> BoundReport:
    """Channel and state bounds from the channel FIM via the analytic state Jacobian.

    The state FIM is T^T J_eta T. With a square, invertible T its inverse is
    T^-1 CRB_eta T^-T, which is evaluated in that form: the state FIM itself
    is far worse conditioned than J_eta because range and clock bias are
    separated only through the weak reflected path.
    """
    J_eta = efim_eta(fim)
    crb_eta = _safe_inverse(J_eta, ETA_NAMES)
    T = state_jacobian(scene, c)
    Tn = T / np.abs(T).max(axis=1, keepdims=True)
    sv = np.linalg.svd(Tn, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise UnidentifiableError("state Jacobian is rank deficient")
    T_inv = np.linalg.inv(T)
    crb_s = T_inv @ crb_eta @ T_inv.T
    crb_s = 0.5 * (crb_s + crb_s.T)
    sd = np.sqrt(np.diag(crb_eta))
    return BoundReport(
        teb={n: float(sd[i]) for i, n in enumerate(ETA_NAMES[:3])},
        angle_bounds={n: float(sd[i]) for i, n in enumerate(ETA_NAMES[3:], start=3)},
        peb_R=float(np.sqrt(crb_s[0, 0] + crb_s[1, 1])),
        peb_U=float(np.sqrt(crb_s[3, 3] + crb_s[4, 4])),
        oeb=float(np.sqrt(crb_s[2, 2])),
        b_R=float(np.sqrt(crb_s[5, 5])),
        b_U=float(np.sqrt(crb_s[6, 6])),
        crb_eta=crb_eta,
        crb_state=crb_s,
    )


def bound_report(scene: SceneState, cfg: SystemConfig, codebooks: CodebookSet, gains) -> BoundReport:
    return crb_state(fim_channel(scene, cfg, codebooks, gains), scene, cfg.c)
