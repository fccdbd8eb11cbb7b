"""Exact (pseudomode) and QRT joint distributions of sequential measurements.

Exact statistics retain the full S+M state across interventions; QRT statistics
chain the one-time reduced map of S between interventions. The grid evaluators
at the bottom compute whole families of joint probabilities on uniform time
grids from a single cached propagator ``expm(dt * L_SM)``.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from . import linops
from .instruments import Instrument, Protocol, dephasing_map, left_multiplication
from .model import ModelParams, build_liouvillian_SM, thermal_pseudomode_state

NEG_TOL = 1e-10
SUM_TOL = 1e-10
FOCK_TOL = 1e-6


class ProbabilityError(ValueError):
    """A joint distribution violates positivity or normalization beyond roundoff."""


class FockConvergenceError(RuntimeError):
    """Results changed by more than the tolerance when the Fock cutoff was raised."""

    def __init__(self, message: str, deviation: float, params: ModelParams):
        super().__init__(message)
        self.deviation = deviation
        self.params = params


@dataclass
class Diagnostics:
    """Counters collected along a computation."""

    clipped: int = 0
    conditioning_flags: int = 0

    def merge(self, other: "Diagnostics") -> None:
        self.clipped += other.clipped
        self.conditioning_flags += other.conditioning_flags


def clip_probabilities(raw: np.ndarray, diagnostics: Diagnostics | None = None,
                       neg_tol: float = NEG_TOL) -> np.ndarray:
    """Clip roundoff excursions outside [0, 1]; larger negativity raises."""
    raw = np.asarray(raw, dtype=float)
    if raw.size and raw.min() < -neg_tol:
        raise ProbabilityError(f"negative probability {raw.min():.3e} beyond tolerance {neg_tol:g}")
    if raw.size and raw.max() > 1 + neg_tol:
        raise ProbabilityError(f"probability {raw.max():.12f} exceeds 1 beyond tolerance {neg_tol:g}")
    out = np.clip(raw, 0.0, 1.0)
    if diagnostics is not None:
        diagnostics.clipped += int(np.count_nonzero(out != raw))
    return out


class JointDistribution(Mapping):
    """Outcome tuple -> probability.

    Indexing returns values clipped to [0, 1]; the unclipped numbers stay in
    :attr:`raw` and are what distances are computed from.
    """

    def __init__(self, raw: dict, *, validate: bool = True):
        self.raw = {k: float(v) for k, v in raw.items()}
        values = np.array(list(self.raw.values()))
        if validate:
            total = values.sum()
            if abs(total - 1) > SUM_TOL:
                raise ProbabilityError(f"joint distribution sums to {total!r}")
            clipped = clip_probabilities(values)
        else:
            clipped = np.clip(values, 0.0, 1.0)
        self.n_clipped = int(np.count_nonzero(clipped != values))
        self._probs = dict(zip(self.raw, clipped.tolist()))

    def __getitem__(self, key):
        return self._probs[key]

    def __iter__(self):
        return iter(self._probs)

    def __len__(self):
        return len(self._probs)

    def __repr__(self):
        body = ", ".join(f"{k}: {v:.6g}" for k, v in self._probs.items())
        return f"JointDistribution({{{body}}})"

    def total(self) -> float:
        return sum(self.raw.values())

    def marginal(self, keep: tuple[int, ...]) -> dict:
        """Marginal over the outcome positions in ``keep``."""
        out: dict = {}
        for k, v in self.raw.items():
            sub = tuple(k[i] for i in keep)
            out[sub] = out.get(sub, 0.0) + v
        return out


def kolmogorov_distance(p: Mapping, q: Mapping) -> float:
    """Half the l1 distance between two distributions over the same outcomes."""
    p_raw = getattr(p, "raw", p)
    q_raw = getattr(q, "raw", q)
    keys = set(p_raw) | set(q_raw)
    return 0.5 * sum(abs(p_raw.get(k, 0.0) - q_raw.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------------------
# S+M building blocks
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def propagator(params: ModelParams, dt: float) -> np.ndarray:
    """``expm(dt * L_SM)``, cached per process."""
    if dt < 0:
        raise ValueError(f"propagation time must be >= 0, got {dt}")
    P = linops.expm_blocked(dt * build_liouvillian_SM(params), _superparity(params))
    P.setflags(write=False)
    return P


def _superparity(params: ModelParams) -> np.ndarray:
    """Eigenvalue of ``X -> Pi X Pi`` on each vec basis element, ``Pi = sigma_z (x) (-1)^(b'b)``.

    The generator commutes with this conjugation, so the propagator splits into
    two blocks.
    """
    n = np.arange(params.dim_mode)
    pi = np.concatenate([(-1) ** n, -(-1) ** n])
    return np.kron(pi, pi)  # vec index a + d b carries pi[a] pi[b]


@lru_cache(maxsize=16)
def _embedding(params: ModelParams) -> np.ndarray:
    E = linops.append_superop(thermal_pseudomode_state(params), 2)
    E.setflags(write=False)
    return E


@lru_cache(maxsize=16)
def _ptrace(params: ModelParams) -> np.ndarray:
    T = linops.ptrace_superop(2, params.dim_mode)
    T.setflags(write=False)
    return T


_TRACE_S = linops.vec(np.eye(2)).conj()


def initial_state_SM(rho_s: np.ndarray, params: ModelParams) -> np.ndarray:
    """``vec(rho_S (x) R)`` with R the truncated thermal pseudomode state."""
    return _embedding(params) @ linops.vec(rho_s)


def reduced_map(t: float, params: ModelParams) -> np.ndarray:
    """One-time reduced map ``Lambda_S(t)`` by matrix-unit tomography.

    Column ``i + 2 j`` of the result is ``vec(Tr_M[exp(tL)(E_ij (x) R)])``, i.e. the
    four matrix units tensored with the thermal mode are propagated and traced.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return linops.identity_map(2)
    return _ptrace(params) @ propagator(params, float(t)) @ _embedding(params)


@dataclass(frozen=True, eq=False)
class ReducedMapFamily:
    """Reduced maps ``Lambda_S(t)`` tabulated on a set of times."""

    params: ModelParams
    times: tuple
    maps: np.ndarray = field(repr=False)
    n_max: int = 0

    def at(self, t: float, atol: float = 1e-12) -> np.ndarray:
        idx = np.flatnonzero(np.abs(np.asarray(self.times) - t) <= atol)
        if idx.size == 0:
            raise KeyError(f"time {t} not in the tabulated reduced-map family")
        return self.maps[idx[0]]


def reduced_map_family(params: ModelParams, times) -> ReducedMapFamily:
    times = tuple(float(t) for t in times)
    maps = np.array([reduced_map(t, params) for t in times])
    return ReducedMapFamily(params=params, times=times, maps=maps, n_max=params.n_max)


def uniform_reduced_maps(params: ModelParams, dt: float, n_steps: int) -> np.ndarray:
    """``Lambda_S(k dt)`` for ``k = 0..n_steps`` from one cached propagator."""
    P = propagator(params, dt)
    T = _ptrace(params)
    Y = np.array(_embedding(params))
    out = np.empty((n_steps + 1, 4, 4), dtype=complex)
    out[0] = linops.identity_map(2)
    for k in range(1, n_steps + 1):
        Y = P @ Y
        out[k] = T @ Y
    return out


# ---------------------------------------------------------------------------
# Joint distributions for a protocol
# ---------------------------------------------------------------------------


def _key(labels) -> tuple:
    # single-outcome identity steps carry the empty label and are dropped
    return tuple(a for a in labels if a != ())


def _exact_branches(protocol: Protocol, params: ModelParams) -> dict:
    dB = params.dim_mode
    branches = {(): initial_state_SM(protocol.initial_state, params)}
    t_prev = 0.0
    for t, inst in protocol.steps:
        dt = t - t_prev
        P = propagator(params, dt) if dt > 0 else None
        lifted = [linops.lift(el, dB) for el in inst.elements]
        new = {}
        for labels, v in branches.items():
            if P is not None:
                v = P @ v
            for a, L in zip(inst.outcomes, lifted):
                new[labels + (a,)] = L @ v
        branches = new
        t_prev = t
    return branches


def exact_joint(protocol: Protocol, params: ModelParams, *, fock_check: bool = False,
                fock_tol: float = FOCK_TOL) -> JointDistribution:
    """Exact sequential statistics from the pseudomode embedding.

    With ``fock_check`` the computation is repeated at ``n_max + 2`` and a
    :class:`FockConvergenceError` is raised if any probability moves by
    ``fock_tol`` or more.
    """
    trace_sm = linops.vec(np.eye(params.dim)).conj()
    raw = {}
    for labels, v in _exact_branches(protocol, params).items():
        key = _key(labels)
        raw[key] = raw.get(key, 0.0) + float((trace_sm @ v).real)
    dist = JointDistribution(raw)
    if fock_check:
        bigger = params.with_(n_max=params.n_max + 2)
        ref = exact_joint(protocol, bigger)
        dev = max(abs(dist.raw[k] - ref.raw[k]) for k in dist.raw)
        if dev >= fock_tol:
            raise FockConvergenceError(
                f"probabilities change by {dev:.3e} between n_max={params.n_max} and "
                f"{bigger.n_max} (tolerance {fock_tol:g})", deviation=dev, params=params)
    return dist


def qrt_joint(protocol: Protocol, params: ModelParams,
              family: ReducedMapFamily | None = None) -> JointDistribution:
    """QRT prediction: the reduced map chained between interventions on S alone.

    With ``family`` the reduced maps are looked up there instead of recomputed.
    """
    lookup = family.at if family is not None else (lambda t: reduced_map(t, params))
    branches = {(): linops.vec(protocol.initial_state)}
    t_prev = 0.0
    for t, inst in protocol.steps:
        Lam = lookup(t - t_prev)
        new = {}
        for labels, v in branches.items():
            w = Lam @ v
            for a, el in inst.items():
                new[labels + (a,)] = el @ w
        branches = new
        t_prev = t
    raw = {}
    for labels, v in branches.items():
        key = _key(labels)
        raw[key] = raw.get(key, 0.0) + float((_TRACE_S @ v).real)
    return JointDistribution(raw)


# ---------------------------------------------------------------------------
# Correlators
# ---------------------------------------------------------------------------


def two_time_trace(A1_map: np.ndarray, A2: np.ndarray, t1: float, t2: float,
                   params: ModelParams, rho0: np.ndarray) -> complex:
    """``Tr_S[A2 Phi_{A1}(t2, t1)[rho0]]`` for an arbitrary intervention superoperator."""
    if not t2 >= t1 >= 0:
        raise ValueError(f"need t2 >= t1 >= 0, got t1={t1}, t2={t2}")
    v = initial_state_SM(rho0, params)
    if t1 > 0:
        v = propagator(params, float(t1)) @ v
    v = linops.lift(A1_map, params.dim_mode) @ v
    if t2 > t1:
        v = propagator(params, float(t2 - t1)) @ v
    rho_s = linops.unvec(_ptrace(params) @ v, 2)
    return complex(np.trace(np.asarray(A2) @ rho_s))


def correlator(A1: np.ndarray, A2: np.ndarray, t1: float, t2: float,
               params: ModelParams, rho0: np.ndarray) -> complex:
    """Time-ordered two-time correlator ``<A2(t2) A1(t1)>``."""
    return two_time_trace(left_multiplication(A1), A2, t1, t2, params, rho0)


def sequential_moment(protocol: Protocol, params: ModelParams) -> float:
    """Average of the product of the (numeric) outcomes over the exact joint."""
    return float(sum(math.prod(k) * p for k, p in exact_joint(protocol, params).raw.items()))


def correlator_sequential_discrepancy(A1: np.ndarray, A2: np.ndarray, protocol: Protocol,
                                      params: ModelParams) -> complex:
    """Correlator minus sequential moment, with times and state taken from the protocol."""
    (t1, _), (t2, _) = protocol.steps
    rho0 = protocol.initial_state
    return correlator(A1, A2, t1, t2, params, rho0) - sequential_moment(protocol, params)


def coherence_discrepancy(A1: np.ndarray, A2: np.ndarray, axis, t1: float, t2: float,
                          params: ModelParams, rho0: np.ndarray) -> complex:
    """Same discrepancy through the coherence-removing intervention ``(I - D) o L_A1``."""
    A1_map = (linops.identity_map(2) - dephasing_map(axis)) @ left_multiplication(A1)
    return two_time_trace(A1_map, A2, t1, t2, params, rho0)


# ---------------------------------------------------------------------------
# Uniform-grid evaluators (one propagator per parameter point)
# ---------------------------------------------------------------------------


def _readout_rows(inst: Instrument, params: ModelParams) -> np.ndarray:
    """Rows ``r_a`` with ``r_a . v = Tr[M_a(Tr_M v)]``, shape (n_out, D^2)."""
    T = _ptrace(params)
    return np.array([_TRACE_S @ el @ T for el in inst.elements])


def _forward_states(params: ModelParams, rho0: np.ndarray, P: np.ndarray, n: int) -> np.ndarray:
    """Columns ``P^k vec(rho0 (x) R)`` for ``k = 0..n``."""
    v = initial_state_SM(rho0, params)
    out = np.empty((v.size, n + 1), dtype=complex)
    out[:, 0] = v
    for k in range(1, n + 1):
        v = P @ v
        out[:, k] = v
    return out


def _backward_rows(rows: np.ndarray, P: np.ndarray, n: int) -> np.ndarray:
    """``rows @ P^s`` for ``s = 0..n``, shape (n+1, n_rows, D^2)."""
    out = np.empty((n + 1,) + rows.shape, dtype=complex)
    out[0] = rows
    for s in range(1, n + 1):
        out[s] = out[s - 1] @ P
    return out


def _check_grid(t_f: float, grid_n: int) -> float:
    if not t_f > 0:
        raise ValueError(f"t_f must be > 0, got {t_f}")
    if grid_n < 2:
        raise ValueError(f"grid_n must be >= 2, got {grid_n}")
    return t_f / (grid_n - 1)


def two_time_final_grid(protocol: Protocol, params: ModelParams, t_f: float, grid_n: int):
    """Exact and QRT two-time probabilities with ``t2 = t_f`` and ``t1 = k t_f/(grid_n-1)``.

    Only the instruments of ``protocol`` are used; its times are ignored.
    Returns ``(exact, qrt)`` arrays of shape ``(grid_n, n_out1, n_out2)``.
    """
    dt = _check_grid(t_f, grid_n)
    N = grid_n - 1
    inst1, inst2 = protocol.instruments
    P = propagator(params, dt)
    dB = params.dim_mode
    fwd = _forward_states(params, protocol.initial_state, P, N)
    back = _backward_rows(_readout_rows(inst2, params), P, N)
    exact = np.empty((grid_n, len(inst1), len(inst2)))
    for a, el in enumerate(inst1.elements):
        V = linops.lift(el, dB) @ fwd  # column i: M_a rho(t_i)
        for i in range(grid_n):
            exact[i, a] = (back[N - i] @ V[:, i]).real

    lams = uniform_reduced_maps(params, dt, N)
    rho = linops.vec(protocol.initial_state)
    qrt = np.empty_like(exact)
    for i in range(grid_n):
        w = lams[i] @ rho
        for a, el in enumerate(inst1.elements):
            u = lams[N - i] @ (el @ w)
            for b, el2 in enumerate(inst2.elements):
                qrt[i, a, b] = (_TRACE_S @ el2 @ u).real
    return exact, qrt


def landscape_grid(protocol: Protocol, params: ModelParams, t_max: float, grid_n: int):
    """Exact and QRT probabilities on the triangle ``t1 <= t2`` of a uniform grid.

    Returns ``(times, exact, qrt)``; probability arrays have shape
    ``(grid_n, grid_n, n_out1, n_out2)`` indexed ``[i1, i2, a1, a2]`` and are NaN
    below the diagonal.
    """
    dt = _check_grid(t_max, grid_n)
    N = grid_n - 1
    inst1, inst2 = protocol.instruments
    P = propagator(params, dt)
    dB = params.dim_mode
    n1, n2 = len(inst1), len(inst2)
    fwd = _forward_states(params, protocol.initial_state, P, N)
    rows = _readout_rows(inst2, params)
    # batch of conditioned states, column (i, a1)
    V = np.concatenate([linops.lift(el, dB) @ fwd for el in inst1.elements], axis=1)
    exact = np.full((grid_n, grid_n, n1, n2), np.nan)
    idx = np.arange(grid_n)
    for d in range(grid_n):
        if d:
            V = P @ V
        probs = (rows @ V).real.reshape(n2, n1, grid_n)  # [a2, a1, i]
        i = idx[: grid_n - d]
        exact[i, i + d] = probs[:, :, i].transpose(2, 1, 0)

    lams = uniform_reduced_maps(params, dt, N)
    rho = linops.vec(protocol.initial_state)
    qrt = np.full_like(exact, np.nan)
    out_rows = np.array([_TRACE_S @ el for el in inst2.elements])
    for i in range(grid_n):
        w = lams[i] @ rho
        for a, el in enumerate(inst1.elements):
            u = el @ w
            qrt[i, i:, a] = (out_rows @ (lams[: grid_n - i] @ u).T).real.T
    return dt * idx, exact, qrt


def three_time_final_grid(protocol: Protocol, params: ModelParams, t_f: float, grid_n: int):
    """Exact and QRT three-time probabilities with ``t3 = t_f`` and ``t1 <= t2`` on a grid.

    Arrays have shape ``(grid_n, grid_n, n1, n2, n3)`` indexed ``[i1, i2, x1, x2, x3]``
    (NaN where ``t1 > t2``).
    """
    dt = _check_grid(t_f, grid_n)
    N = grid_n - 1
    inst1, inst2, inst3 = protocol.instruments
    n1, n2, n3 = len(inst1), len(inst2), len(inst3)
    P = propagator(params, dt)
    dB = params.dim_mode
    fwd = _forward_states(params, protocol.initial_state, P, N)
    back = _backward_rows(_readout_rows(inst3, params), P, N)  # [s, x3, :]
    lift2 = [linops.lift(el, dB) for el in inst2.elements]
    # C[s, x3, x2, :] = back[s, x3] @ lift(M2[x2])
    C = np.stack([back @ L for L in lift2], axis=2)
    V = np.concatenate([linops.lift(el, dB) @ fwd for el in inst1.elements], axis=1)
    exact = np.full((grid_n, grid_n, n1, n2, n3), np.nan)
    for d in range(grid_n):
        if d:
            V = P @ V
        for i in range(grid_n - d):
            j = i + d
            cols = V[:, [a * grid_n + i for a in range(n1)]]  # (D^2, n1)
            exact[i, j] = np.einsum("zyk,kx->xyz", C[N - j], cols).real

    lams = uniform_reduced_maps(params, dt, N)
    rho = linops.vec(protocol.initial_state)
    qrt = np.full_like(exact, np.nan)
    for i in range(grid_n):
        w = lams[i] @ rho
        for x1, e1 in enumerate(inst1.elements):
            u1 = e1 @ w
            for j in range(i, grid_n):
                u2 = lams[j - i] @ u1
                for x2, e2 in enumerate(inst2.elements):
                    u3 = lams[N - j] @ (e2 @ u2)
                    for x3, e3 in enumerate(inst3.elements):
                        qrt[i, j, x1, x2, x3] = (_TRACE_S @ e3 @ u3).real
    return exact, qrt


def outcome_keys(protocol: Protocol) -> list[tuple]:
    return [_key(k) for k in product(*(inst.outcomes for inst in protocol.instruments))]
