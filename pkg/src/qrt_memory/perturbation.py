"""Second-order (Born-level) correction to the QRT two-time propagator.

For the coupling ``sigma_x (x) B`` and a zero-mean Gaussian bath with correlation
``C(t) = Tr[B(t) B R]`` the leading memory kernel is, with ``tau = tau1 + tau2``,
``S = sigma_x`` and ``U_t = exp(t L_S)`` the free system evolution::

    K(tau2, tau1)[rho] = -( C(tau)   [S, U_tau2 A1 U_tau1 (S rho)]
                          - C(tau)^* [S, U_tau2 A1 U_tau1 (rho S)] )

The bath evolves freely through both intervals because ``A1`` acts on S only.
``C`` already carries the coupling strength squared.
"""
from __future__ import annotations

import numpy as np

from . import linops
from . import multitime as mt
from .instruments import Protocol
from .model import SIGMA_X, ModelParams, bath_correlation, system_hamiltonian

DEFAULT_GRID_N = 121


def free_system_propagator(t: float, params: ModelParams) -> np.ndarray:
    """Superoperator of ``rho -> e^{-i H_S t} rho e^{i H_S t}``."""
    w = 0.5 * params.omega0 * t
    U = np.diag([np.exp(-1j * w), np.exp(1j * w)])
    return linops.sandwich(U)


def _free_propagators(times: np.ndarray, params: ModelParams) -> np.ndarray:
    return np.array([free_system_propagator(t, params) for t in times])


def second_order_kernel(A1: np.ndarray, tau2: float, tau1: float, params: ModelParams) -> np.ndarray:
    """Leading-order memory kernel as a qubit superoperator."""
    if tau1 < 0 or tau2 < 0:
        raise ValueError("kernel arguments must be >= 0")
    c = bath_correlation(tau1 + tau2, params)
    chain = free_system_propagator(tau2, params) @ A1 @ free_system_propagator(tau1, params)
    comm = linops.commutator(SIGMA_X)
    return -(c * comm @ chain @ linops.left(SIGMA_X)
             - np.conj(c) * comm @ chain @ linops.right(SIGMA_X))


def _trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def phi_q_second_order(A1: np.ndarray, t2: float, t1: float, params: ModelParams,
                       grid_n: int = DEFAULT_GRID_N) -> np.ndarray:
    """Double convolution ``int dtau2 int dtau1 Lambda(t2-t1-tau2) K(tau2,tau1) Lambda(t1-tau1)``.

    Composite trapezoid on a ``grid_n x grid_n`` grid. The reduced maps are the
    exact (pseudomode) ones, sampled on the two uniform grids.
    """
    if not t2 >= t1 >= 0:
        raise ValueError(f"need t2 >= t1 >= 0, got t1={t1}, t2={t2}")
    if t1 == 0 or t2 == t1:
        return np.zeros((4, 4), dtype=complex)
    n = grid_n
    tau1 = np.linspace(0.0, t1, n)
    tau2 = np.linspace(0.0, t2 - t1, n)
    h1, h2 = tau1[1], tau2[1]
    lam1 = mt.uniform_reduced_maps(params, h1, n - 1)  # lam1[k] = Lambda(k h1)
    lam2 = mt.uniform_reduced_maps(params, h2, n - 1)
    U1 = _free_propagators(tau1, params)
    U2 = _free_propagators(tau2, params)
    comm = linops.commutator(SIGMA_X)

    # outer factors Lambda(t2-t1-tau2_j) [S, .] U_tau2_j
    outer = lam2[::-1] @ comm @ U2
    # inner factors A1 U_tau1_i S_side Lambda(t1-tau1_i)
    inner_l = A1 @ U1 @ linops.left(SIGMA_X) @ lam1[::-1]
    inner_r = A1 @ U1 @ linops.right(SIGMA_X) @ lam1[::-1]

    c = bath_correlation(tau1[:, None] + tau2[None, :], params)  # [i, j]
    W = _trapezoid_weights(n, h1)[:, None] * _trapezoid_weights(n, h2)[None, :]
    G = (np.einsum("ij,iab->jab", W * c, inner_l)
         - np.einsum("ij,iab->jab", W * np.conj(c), inner_r))
    return -np.einsum("jab,jbc->ac", outer, G)


def corrected_joint(protocol: Protocol, params: ModelParams,
                    grid_n: int = DEFAULT_GRID_N) -> mt.JointDistribution:
    """QRT joint plus the second-order memory correction, per outcome pair."""
    if len(protocol.steps) != 2:
        raise ValueError("corrected_joint needs a two-step protocol")
    (t1, inst1), (t2, inst2) = protocol.steps
    qrt = mt.qrt_joint(protocol, params)
    rho = linops.vec(protocol.initial_state)
    trace = linops.vec(np.eye(2)).conj()
    raw = dict(qrt.raw)
    for a1, el1 in inst1.items():
        phi = phi_q_second_order(el1, t2, t1, params, grid_n)
        for a2, el2 in inst2.items():
            raw[mt._key((a1, a2))] += float((trace @ el2 @ phi @ rho).real)
    return mt.JointDistribution(raw, validate=False)


def epsilon_lambda2(protocol: Protocol, params: ModelParams, grid_n: int = DEFAULT_GRID_N) -> float:
    """Kolmogorov distance between the exact joint and the second-order corrected one."""
    return mt.kolmogorov_distance(mt.exact_joint(protocol, params),
                                  corrected_joint(protocol, params, grid_n))
