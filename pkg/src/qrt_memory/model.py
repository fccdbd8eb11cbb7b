"""Spin-boson model with a Lorentzian bath, realized through its pseudomode embedding.

The system S is a qubit, the pseudomode M a damped bosonic mode truncated to Fock
levels ``0..n_max``. Composite operators are ordered ``kron(S, M)``; units hbar = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import linops

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

# minimum fraction of the untruncated thermal weight kept below the Fock cutoff
THERMAL_WEIGHT_TOL = 1e-6


class FockTruncationError(ValueError):
    """The pseudomode Fock cutoff is too small for the requested temperature."""

    def __init__(self, message: str, beta: float, n_max: int):
        super().__init__(message)
        self.beta = beta
        self.n_max = n_max


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the spin-boson / pseudomode model.

    ``beta=math.inf`` is the zero-temperature environment.
    """

    omega0: float = 4.5
    eta: float = 4.5
    gamma: float = 0.1
    lam: float = 0.1
    beta: float = math.inf
    n_max: int = 8

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0 (or inf), got {self.beta}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")

    @property
    def dim_mode(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return 2 * (self.n_max + 1)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


def n_thermal(eta: float, beta: float) -> float:
    """Bose-Einstein occupation ``1/(exp(beta*eta) - 1)``; zero for infinite beta."""
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    if math.isinf(beta):
        return 0.0
    return 1.0 / math.expm1(beta * eta)


def annihilation(n_max: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_max + 1)), k=1).astype(complex)


def build_H_SM(params: ModelParams) -> np.ndarray:
    """``(w0/2) sz (x) 1 + eta 1 (x) b^+b + lam sx (x) (b + b^+)``."""
    b = annihilation(params.n_max)
    num = linops.dag(b) @ b
    eye_m = np.eye(params.dim_mode)
    return (0.5 * params.omega0 * np.kron(SIGMA_Z, eye_m)
            + params.eta * np.kron(IDENTITY_2, num)
            + params.lam * np.kron(SIGMA_X, b + linops.dag(b)))


@lru_cache(maxsize=64)
def build_liouvillian_SM(params: ModelParams) -> np.ndarray:
    """Thermal pseudomode generator on S+M in column-stacking form."""
    nb = n_thermal(params.eta, params.beta)
    b = np.kron(IDENTITY_2, annihilation(params.n_max))
    L = -1j * linops.commutator(build_H_SM(params))
    L = L + 2 * params.gamma * (nb + 1) * linops.dissipator(b)
    if nb > 0:
        L = L + 2 * params.gamma * nb * linops.dissipator(linops.dag(b))
    L.setflags(write=False)
    return L


def thermal_weights(params: ModelParams) -> np.ndarray:
    """Normalized Fock populations of the truncated thermal pseudomode state."""
    if math.isinf(params.beta):
        w = np.zeros(params.dim_mode)
        w[0] = 1.0
        return w
    x = math.exp(-params.beta * params.eta)
    w = x ** np.arange(params.dim_mode)
    kept = 1.0 - x ** params.dim_mode  # fraction of the infinite geometric series
    if kept < 1.0 - THERMAL_WEIGHT_TOL:
        raise FockTruncationError(
            f"n_max={params.n_max} keeps only {kept:.8f} of the thermal weight at "
            f"beta={params.beta} (n_beta={n_thermal(params.eta, params.beta):.4f}); "
            f"increase n_max",
            beta=params.beta, n_max=params.n_max)
    return w / w.sum()


def thermal_pseudomode_state(params: ModelParams) -> np.ndarray:
    return np.diag(thermal_weights(params)).astype(complex)


def lorentzian_J(omega, params: ModelParams):
    """Lorentzian spectral density ``2 lam^2 gamma / ((w - eta)^2 + gamma^2)``.

    Display only: integrating it over the real line gives ``2 pi lam^2``, while
    the pseudomode dynamics corresponds to :func:`bath_correlation`.
    """
    omega = np.asarray(omega, dtype=float)
    return 2 * params.lam**2 * params.gamma / ((omega - params.eta) ** 2 + params.gamma**2)


def bath_correlation(t, params: ModelParams):
    """Bath correlation ``lam^2 [(n+1) e^{-i eta t} + n e^{i eta t}] e^{-gamma t}``, t >= 0.

    ``n`` is the thermal occupation at the pseudomode frequency, the same
    flat-occupation convention the pseudomode generator uses.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("bath correlation is defined for t >= 0")
    nb = n_thermal(params.eta, params.beta)
    osc = (nb + 1) * np.exp(-1j * params.eta * t) + nb * np.exp(1j * params.eta * t)
    out = params.lam**2 * osc * np.exp(-params.gamma * t)
    return out[()] if out.ndim == 0 else out


def system_hamiltonian(params: ModelParams) -> np.ndarray:
    return 0.5 * params.omega0 * SIGMA_Z
