"""2D geometry and the mapping between node states and channel parameters.

Frame conventions
-----------------
Every array is a ULA along its local x-axis with broadside along local +y, and
an angle ``nu`` satisfies ``sin(nu) = x_local`` of the unit direction
(``nu = atan2(x_local, y_local)``, so it spans the full circle).

* The BS frame is the global frame.
* The HRIS frame is the global frame rotated by ``alpha`` with its x-axis
  reversed, i.e. element indices grow along ``-[cos alpha, sin alpha]``. With
  this handedness ``pi - theta_BR - phi_RB == alpha`` (mod 2 pi) for any
  scene, which is what the orientation estimate relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SPEED_OF_LIGHT, SystemConfig
from .errors import ConfigError, DegenerateGeometryError, InconsistentAnglesError

BETA_TOL = 1e-6
COLLINEAR_TOL = 1e-9


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return float(y) if np.ndim(y) == 0 else y


def rotate(v, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]]) @ np.asarray(v, dtype=float)


def direction_and_distance(p_from, p_to, frame_rotation: float = 0.0, mirrored: bool = False):
    """Broadside angle and range from ``p_from`` to ``p_to``.

    The local frame is the global frame rotated by ``frame_rotation``;
    ``mirrored`` reverses its x-axis (used for the HRIS).
    """
    diff = np.asarray(p_to, dtype=float) - np.asarray(p_from, dtype=float)
    dist = float(np.hypot(diff[0], diff[1]))
    if dist == 0.0:
        raise DegenerateGeometryError("coincident points have no direction")
    x_l, y_l = rotate(diff / dist, -frame_rotation)
    if mirrored:
        x_l = -x_l
    return float(np.arctan2(x_l, y_l)), dist


@dataclass(frozen=True, eq=False)
class SceneState:
    p_B: np.ndarray
    p_R: np.ndarray
    p_U: np.ndarray
    alpha: float
    b_R: float = 0.0
    b_U: float = 0.0

    def __post_init__(self):
        for name in ("p_B", "p_R", "p_U"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(2))
        if min(self.d_BR, self.d_BU, self.d_RU) <= 0:
            raise DegenerateGeometryError("BS, HRIS and UE positions must be pairwise distinct")
        if self.b_R < 0 or self.b_U < 0:
            raise ConfigError("clock biases must be non-negative")

    @property
    def d_BR(self) -> float:
        return float(np.linalg.norm(self.p_R - self.p_B))

    @property
    def d_BU(self) -> float:
        return float(np.linalg.norm(self.p_U - self.p_B))

    @property
    def d_RU(self) -> float:
        return float(np.linalg.norm(self.p_U - self.p_R))

    def triangle_area(self) -> float:
        u, v = self.p_R - self.p_B, self.p_U - self.p_B
        return 0.5 * abs(u[0] * v[1] - u[1] * v[0])

    def vector(self) -> np.ndarray:
        """State vector [p_R, alpha, p_U, b_R, b_U]."""
        return np.array([*self.p_R, self.alpha, *self.p_U, self.b_R, self.b_U])

    @classmethod
    def from_vector(cls, p_B, zeta_s) -> "SceneState":
        z = np.asarray(zeta_s, dtype=float)
        return cls(p_B=p_B, p_R=z[0:2], alpha=z[2], p_U=z[3:5], b_R=z[5], b_U=z[6])

    def translated(self, offset) -> "SceneState":
        off = np.asarray(offset, dtype=float)
        return SceneState(self.p_B + off, self.p_R + off, self.p_U + off, self.alpha, self.b_R, self.b_U)


def reference_scene(b_R: float = 0.0, b_U: float = 0.0) -> SceneState:
    return SceneState(p_B=[0.0, 0.0], p_R=[2.0, 10.0], p_U=[6.0, 6.0], alpha=np.pi / 6, b_R=b_R, b_U=b_U)


ETA_NAMES = ("tau_BR", "tau_BU", "tau_BRU", "theta_BR", "theta_BU", "theta_RU", "phi_RB")
STATE_NAMES = ("p_R_x", "p_R_y", "alpha", "p_U_x", "p_U_y", "b_R", "b_U")


@dataclass
class ChannelParams:
    tau_BR: float
    tau_BU: float
    tau_BRU: float
    theta_BR: float
    theta_BU: float
    theta_RU: float
    phi_RB: float
    g_BR: complex = 1.0
    g_BU: complex = 1.0
    g_BRU: complex = 1.0

    def eta(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in ETA_NAMES])

    def gains(self) -> np.ndarray:
        return np.array([self.g_BR, self.g_BU, self.g_BRU], dtype=complex)

    @classmethod
    def from_vectors(cls, eta, gains=(1.0, 1.0, 1.0)) -> "ChannelParams":
        return cls(*map(float, eta), *map(complex, gains))


@dataclass
class SceneEstimate:
    p_R_hat: np.ndarray
    p_U_hat: np.ndarray
    alpha_hat: float
    b_R_hat: float
    b_U_hat: float
    d_BR_hat: float
    d_BU_hat: float
    flags: tuple = field(default_factory=tuple)

    def vector(self) -> np.ndarray:
        return np.array([*self.p_R_hat, self.alpha_hat, *self.p_U_hat, self.b_R_hat, self.b_U_hat])


def free_space_magnitudes(scene: SceneState, wavelength: float):
    """|g_BR|, |g_BU|, |g_BRU| under per-segment free-space loss."""
    k = wavelength / (4 * np.pi)
    return k / scene.d_BR, k / scene.d_BU, k * k / (scene.d_BR * scene.d_RU)


def geometric_params(scene: SceneState, c: float = SPEED_OF_LIGHT) -> np.ndarray:
    """eta_ch = [tau_BR, tau_BU, tau_BRU, theta_BR, theta_BU, theta_RU, phi_RB]."""
    theta_BR, d_BR = direction_and_distance(scene.p_B, scene.p_R)
    theta_BU, d_BU = direction_and_distance(scene.p_B, scene.p_U)
    theta_RU, d_RU = direction_and_distance(scene.p_R, scene.p_U, scene.alpha, mirrored=True)
    phi_RB, _ = direction_and_distance(scene.p_R, scene.p_B, scene.alpha, mirrored=True)
    return np.array([
        d_BR / c + scene.b_R,
        d_BU / c + scene.b_U,
        (d_BR + d_RU) / c + scene.b_U,
        theta_BR, theta_BU, theta_RU, phi_RB,
    ])


def channel_params_from_state(scene: SceneState, cfg: SystemConfig, rng=None, gains=None) -> ChannelParams:
    """Forward map from node states to channel parameters.

    Gains are taken from ``gains`` when given; otherwise free-space magnitudes
    are used with phases drawn uniformly from ``rng`` (zero phase without an
    rng).
    """
    eta = geometric_params(scene, cfg.c)
    if np.any(eta[:3] >= cfg.max_delay):
        raise ConfigError(
            f"path delay plus clock bias exceeds the unambiguous span 1/delta_f = {cfg.max_delay:.3e} s")
    if gains is None:
        mags = np.array(free_space_magnitudes(scene, cfg.wavelength))
        phases = rng.uniform(0.0, 2 * np.pi, size=3) if rng is not None else np.zeros(3)
        gains = mags * np.exp(-1j * phases)
    return ChannelParams.from_vectors(eta, gains)


def triangle_solve(d_hat: float, theta_BR: float, theta_BU: float, theta_RU: float, phi_RB: float):
    """Distances (d_BU, d_BR) from the excess path length and the node angles.

    Law of sines on the BS-HRIS-UE triangle with interior angles beta0 (BS),
    beta1 (HRIS) and beta2 (UE): every side equals K sin(opposite angle), and
    d_hat = d_BR + d_RU - d_BU fixes K.
    """
    b0 = abs(wrap_angle(theta_BR - theta_BU))
    b1 = abs(wrap_angle(phi_RB - theta_RU))
    b2 = np.pi - b0 - b1
    if min(b0, b1, b2) <= BETA_TOL:
        raise DegenerateGeometryError(f"degenerate triangle: beta = ({b0:.3g}, {b1:.3g}, {b2:.3g})")
    denom = np.sin(b0) + np.sin(b2) - np.sin(b1)
    if denom <= 0:
        raise InconsistentAnglesError(f"non-positive law-of-sines denominator {denom:.3g}")
    if d_hat <= 0:
        raise DegenerateGeometryError(f"excess path length must be positive, got {d_hat:.3g} m")
    K = d_hat / denom
    return K * np.sin(b1), K * np.sin(b2)


def state_from_channel_params(est: ChannelParams, p_B, c: float = SPEED_OF_LIGHT) -> SceneEstimate:
    p_B = np.asarray(p_B, dtype=float)
    d_hat = c * (est.tau_BRU - est.tau_BU)
    d_BU, d_BR = triangle_solve(d_hat, est.theta_BR, est.theta_BU, est.theta_RU, est.phi_RB)
    p_R = p_B + d_BR * np.array([np.sin(est.theta_BR), np.cos(est.theta_BR)])
    p_U = p_B + d_BU * np.array([np.sin(est.theta_BU), np.cos(est.theta_BU)])
    b_R = est.tau_BR - d_BR / c
    b_U = est.tau_BU - d_BU / c
    alpha = wrap_angle(np.pi - est.theta_BR - est.phi_RB)
    flags = tuple(name for name, b in (("negative_b_R", b_R), ("negative_b_U", b_U)) if b < 0)
    return SceneEstimate(p_R, p_U, alpha, b_R, b_U, d_BR, d_BU, flags)


def state_jacobian(scene: SceneState, c: float = SPEED_OF_LIGHT) -> np.ndarray:
    """d eta_ch / d [p_R, alpha, p_U, b_R, b_U], rows ordered as ETA_NAMES."""
    v_BR = scene.p_R - scene.p_B
    v_BU = scene.p_U - scene.p_B
    v_RU = scene.p_U - scene.p_R
    d_BR, d_BU, d_RU = scene.d_BR, scene.d_BU, scene.d_RU
    u_BR, u_BU, u_RU = v_BR / d_BR, v_BU / d_BU, v_RU / d_RU

    J = np.zeros((7, 7))
    pR, al, pU, bR, bU = slice(0, 2), 2, slice(3, 5), 5, 6
    J[0, pR] = u_BR / c
    J[0, bR] = 1.0
    J[1, pU] = u_BU / c
    J[1, bU] = 1.0
    J[2, pR] = (u_BR - u_RU) / c
    J[2, pU] = u_RU / c
    J[2, bU] = 1.0
    # BS angles: theta = atan2(dx, dy)
    J[3, pR] = np.array([v_BR[1], -v_BR[0]]) / d_BR**2
    J[4, pU] = np.array([v_BU[1], -v_BU[0]]) / d_BU**2
    # HRIS angles: nu = atan2(dy, dx) of the global direction - alpha - pi/2
    J[5, pU] = np.array([-v_RU[1], v_RU[0]]) / d_RU**2
    J[5, pR] = -J[5, pU]
    J[5, al] = -1.0
    J[6, pR] = np.array([-v_BR[1], v_BR[0]]) / d_BR**2
    J[6, al] = -1.0
    return J
