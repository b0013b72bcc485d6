"""BS precoders, HRIS reflection profiles / combiners and the stacked
measurement matrices used by the angle estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True, eq=False)
class CodebookSet:
    F: np.ndarray  # (M_B, T) precoders, unit-norm columns
    Gamma: np.ndarray  # (M_R, T) reflection profiles, unit modulus
    C: np.ndarray  # (M_R, T) combiners, unit modulus

    @property
    def T(self) -> int:
        return self.F.shape[1]


def dft_codebook(M: int) -> np.ndarray:
    m = np.arange(M)
    return np.exp(-2j * np.pi * np.outer(m, m) / M) / np.sqrt(M)


def build_codebooks(cfg, rng) -> CodebookSet:
    """DFT precoders cycled with wraparound; random-phase profiles and combiners."""
    W = dft_codebook(cfg.M_B)
    F = W[:, np.arange(cfg.T) % cfg.M_B]
    Gamma = np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=(cfg.M_R, cfg.T)))
    C = np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=(cfg.M_R, cfg.T)))
    return CodebookSet(F=F, Gamma=Gamma, C=C)


def _slotwise_kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(f"slot counts differ: {A.shape} vs {B.shape}")
    T = A.shape[1]
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], T)


def assemble_omega(F: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Columns f_t kron c_t, so that Omega.T @ vec(a_R a_B^T) gives c_t^T a_R a_B^T f_t."""
    return _slotwise_kron(F, C)


def assemble_xi(F: np.ndarray, Gamma: np.ndarray) -> np.ndarray:
    """Columns f_t kron gamma_t (slot-wise Khatri-Rao form of F kron Gamma^T)."""
    return _slotwise_kron(F, Gamma)


def cascade_vector(a_B: np.ndarray, a_R: np.ndarray) -> np.ndarray:
    """vec(a_R a_B^T) in column-major order, i.e. a_B kron a_R."""
    return np.kron(a_B, a_R)


def as_slot_tensor(M: np.ndarray, M_B: int) -> np.ndarray:
    """Reshape a stacked (M_B*M_R, T) matrix to (T, M_B, M_R) for contractions."""
    T = M.shape[1]
    return M.T.reshape(T, M_B, -1)
