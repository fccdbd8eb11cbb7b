"""QRT-violation distances, their time averages, and the P-divisibility witness."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import linops
from . import multitime as mt
from .instruments import Protocol
from .model import IDENTITY_2, SIGMA_X, SIGMA_Y, SIGMA_Z, ModelParams

PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)
DEFAULT_SAMPLES = 2048
DEFAULT_GRID_N = 81
COND_THRESHOLD = 1e-8
AFFINE_IMAG_TOL = 1e-8
ROUNDOFF_IMAG = 1e-13


# ---------------------------------------------------------------------------
# QRT distances
# ---------------------------------------------------------------------------


def epsilon_qrt(protocol: Protocol, params: ModelParams) -> float:
    """Kolmogorov distance between exact and QRT two-time joint distributions."""
    if len(protocol.steps) != 2:
        raise ValueError("epsilon_qrt needs a two-step protocol")
    return mt.kolmogorov_distance(mt.exact_joint(protocol, params), mt.qrt_joint(protocol, params))


def epsilon_qrt_3(protocol: Protocol, params: ModelParams) -> float:
    """Kolmogorov distance between exact and QRT three-time joint distributions."""
    if len(protocol.steps) != 3:
        raise ValueError("epsilon_qrt_3 needs a three-step protocol")
    return mt.kolmogorov_distance(mt.exact_joint(protocol, params), mt.qrt_joint(protocol, params))


def _distances(exact: np.ndarray, qrt: np.ndarray, n_outcome_axes: int,
               diagnostics: mt.Diagnostics | None) -> np.ndarray:
    axes = tuple(range(-n_outcome_axes, 0))
    finite = np.isfinite(exact)
    mt.clip_probabilities(exact[finite], diagnostics)
    mt.clip_probabilities(qrt[finite], diagnostics)
    return 0.5 * np.abs(exact - qrt).sum(axis=axes)


def trapezoid_average(values: np.ndarray, t_f: float) -> float:
    """``(1/t_f) * integral`` of samples on a uniform grid over ``[0, t_f]``."""
    values = np.asarray(values, dtype=float)
    h = t_f / (values.size - 1)
    return float(h * (values.sum() - 0.5 * (values[0] + values[-1])) / t_f)


def epsilon_qrt_profile(protocol: Protocol, params: ModelParams, t_f: float, grid_n: int,
                        diagnostics: mt.Diagnostics | None = None) -> np.ndarray:
    """``eps_QRT(t_f, t1)`` on the uniform grid ``t1 = k t_f/(grid_n-1)``."""
    exact, qrt = mt.two_time_final_grid(protocol, params, t_f, grid_n)
    eps = _distances(exact, qrt, 2, diagnostics)
    eps[0] = 0.0  # factorized initial state: QRT exact at t1 = 0
    return eps


def avg_epsilon_qrt(t_f: float, protocol: Protocol, params: ModelParams,
                    grid_n: int = DEFAULT_GRID_N,
                    diagnostics: mt.Diagnostics | None = None) -> float:
    """Uniform average of ``eps_QRT(t_f, t1)`` over ``t1 in [0, t_f]`` (composite trapezoid)."""
    return trapezoid_average(epsilon_qrt_profile(protocol, params, t_f, grid_n, diagnostics), t_f)


def epsilon_qrt_3_table(protocol: Protocol, params: ModelParams, t_f: float, grid_n: int,
                        diagnostics: mt.Diagnostics | None = None) -> np.ndarray:
    """``eps3(t_f, t2, t1)`` indexed ``[i1, i2]`` on the uniform grid (NaN for t1 > t2)."""
    exact, qrt = mt.three_time_final_grid(protocol, params, t_f, grid_n)
    return _distances(exact, qrt, 3, diagnostics)


def avg_epsilon_qrt_3(t_f: float, protocol: Protocol, params: ModelParams,
                      grid_n: int = DEFAULT_GRID_N,
                      diagnostics: mt.Diagnostics | None = None) -> float:
    """Nested average: t2 uniform on [0, t_f], then t1 uniform on [0, t2].

    Both layers use the trapezoid rule on the same uniform grid, so the inner
    average at ``t2 = j h`` runs over ``t1 = 0, h, ..., j h``. The inner average at
    ``t2 = 0`` is taken as 0.
    """
    eps = epsilon_qrt_3_table(protocol, params, t_f, grid_n, diagnostics)
    h = t_f / (grid_n - 1)
    inner = np.zeros(grid_n)
    for j in range(1, grid_n):
        inner[j] = trapezoid_average(eps[: j + 1, j], j * h)
    return trapezoid_average(inner, t_f)


# ---------------------------------------------------------------------------
# Affine (Bloch) representation and the P-divisibility witness
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AffineMap:
    """Bloch-vector action ``r -> M r + v`` of a qubit map."""

    M: np.ndarray
    v: np.ndarray

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return np.asarray(r) @ self.M.T + self.v


def affine_of(Phi: np.ndarray, tol: float = AFFINE_IMAG_TOL) -> AffineMap:
    """``M_ij = Tr[s_i Phi(s_j)]/2``, ``v_i = Tr[s_i Phi(1)]/2``."""
    if linops.superop_dim(Phi) != 2:
        raise ValueError("affine_of expects a qubit superoperator")
    images = [linops.apply(Phi, s) for s in PAULIS]
    offset = linops.apply(Phi, IDENTITY_2)
    M = np.array([[0.5 * np.trace(si @ img) for img in images] for si in PAULIS])
    v = np.array([0.5 * np.trace(si @ offset) for si in PAULIS])
    imag = max(np.abs(M.imag).max(), np.abs(v.imag).max())
    if imag > tol:
        raise ValueError(f"map is not Hermiticity preserving: imaginary residue {imag:.3e}")
    return AffineMap(M=M.real, v=v.real)


@lru_cache(maxsize=8)
def fibonacci_sphere(n: int = DEFAULT_SAMPLES) -> np.ndarray:
    """``n`` deterministic, nearly uniform unit vectors on the Fibonacci lattice."""
    if n < 1:
        raise ValueError("need at least one sample point")
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + np.sqrt(5.0)) * k
    rho = np.sqrt(1.0 - z * z)
    pts = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts.setflags(write=False)
    return pts


def max_bloch_norm(aff: AffineMap, samples: np.ndarray | None = None, refine: bool = True) -> float:
    """Maximum of ``||M r + v||`` over the Bloch ball.

    The norm is convex in r, so the maximum over the ball sits on the sphere:
    sample the sphere, then refine the best sample by projected gradient ascent
    with backtracking.
    """
    pts = fibonacci_sphere() if samples is None else samples
    vals = np.linalg.norm(aff(pts), axis=1)
    best = int(np.argmax(vals))
    r, f = pts[best], float(vals[best])
    if not refine:
        return f
    step = 0.1
    for _ in range(200):
        y = aff.M @ r + aff.v
        ny = np.linalg.norm(y)
        if ny == 0:
            break
        g = aff.M.T @ y / ny
        g_tan = g - (g @ r) * r
        if np.linalg.norm(g_tan) < 1e-14:
            break
        while step > 1e-12:
            cand = r + step * g_tan
            cand /= np.linalg.norm(cand)
            fc = float(np.linalg.norm(aff.M @ cand + aff.v))
            if fc > f:
                r, f = cand, fc
                step *= 2
                break
            step *= 0.5
        else:
            break
    return f


def q_of_map(V: np.ndarray, samples: np.ndarray | None = None) -> float:
    """Non-positivity ``max(0, max_r ||M r + v|| - 1)`` of a trace-preserving qubit map."""
    return max(0.0, max_bloch_norm(affine_of(V), samples) - 1.0)


def intermediate_map(lam2: np.ndarray, lam1: np.ndarray,
                     threshold: float = COND_THRESHOLD) -> np.ndarray | None:
    """``Lambda(t2) o Lambda(t1)^{-1}``, or None when ``Lambda(t1)`` is near singular."""
    if np.linalg.svd(lam1, compute_uv=False).min() < threshold:
        return None
    return np.linalg.solve(lam1.T, lam2.T).T


def q_witness(lam2: np.ndarray, lam1: np.ndarray, samples: np.ndarray | None = None,
              threshold: float = COND_THRESHOLD) -> float:
    """P-divisibility witness for the intermediate map between two reduced maps.

    Returns NaN when ``lam1`` fails the conditioning threshold.
    """
    s_min = np.linalg.svd(lam1, compute_uv=False).min()
    if s_min < threshold:
        return float("nan")
    V = np.linalg.solve(lam1.T, lam2.T).T
    # the imaginary residue is round-off: it grows with the size of V and is
    # amplified by ~1/s_min when inverting lam1
    tol = max(AFFINE_IMAG_TOL * max(1.0, np.abs(V).max()), ROUNDOFF_IMAG * np.abs(lam2).max() / s_min)
    return max(0.0, max_bloch_norm(affine_of(V, tol), samples) - 1.0)


def q_witness_at(t2: float, t1: float, family: mt.ReducedMapFamily,
                 samples: np.ndarray | None = None, threshold: float = COND_THRESHOLD) -> float:
    """:func:`q_witness` for two times looked up in a tabulated reduced-map family."""
    if not t2 >= t1 >= 0:
        raise ValueError(f"need t2 >= t1 >= 0, got t1={t1}, t2={t2}")
    return q_witness(family.at(t2), family.at(t1), samples, threshold)


def q_profile(t_f: float, params: ModelParams, grid_n: int = DEFAULT_GRID_N,
              samples: np.ndarray | None = None,
              diagnostics: mt.Diagnostics | None = None) -> np.ndarray:
    """``q(t_f, t1)`` on the uniform ``t1`` grid; NaN marks conditioning failures."""
    h = t_f / (grid_n - 1)
    lams = mt.uniform_reduced_maps(params, h, grid_n - 1)
    q = np.array([q_witness(lams[-1], lams[i], samples) for i in range(grid_n)])
    if diagnostics is not None:
        diagnostics.conditioning_flags += int(np.isnan(q).sum())
    return q


def avg_n_witness(t_f: float, params: ModelParams, grid_n: int = DEFAULT_GRID_N,
                  samples: np.ndarray | None = None,
                  diagnostics: mt.Diagnostics | None = None) -> float:
    """Uniform average of ``q(t_f, t1)`` over ``t1 in [0, t_f]``.

    Flagged points are dropped and the trapezoid rule runs over the rest.
    """
    q = q_profile(t_f, params, grid_n, samples, diagnostics)
    t = np.linspace(0.0, t_f, grid_n)
    ok = np.isfinite(q)
    if ok.sum() < 2:
        return float("nan")
    return float(np.trapezoid(q[ok], t[ok]) / t_f)
