"""Measurement instruments and intervention protocols on the qubit."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linops
from .model import IDENTITY_2, SIGMA_X, SIGMA_Y, SIGMA_Z

AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}

STATE_LABELS = {
    "0": (0.0, 0.0, 1.0),
    "1": (0.0, 0.0, -1.0),
    "+": (1.0, 0.0, 0.0),
    "-": (-1.0, 0.0, 0.0),
    "+i": (0.0, 1.0, 0.0),
    "-i": (0.0, -1.0, 0.0),
}


def bloch_operator(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return r[0] * SIGMA_X + r[1] * SIGMA_Y + r[2] * SIGMA_Z


def state_from_bloch(r) -> np.ndarray:
    return 0.5 * (IDENTITY_2 + bloch_operator(r))


def state_from_label(label: str) -> np.ndarray:
    """Pure qubit state for a label in ``0, 1, +, -, +i, -i``."""
    try:
        return state_from_bloch(STATE_LABELS[label])
    except KeyError:
        raise ValueError(f"unknown state label {label!r}; expected one of {sorted(STATE_LABELS)}") from None


def _unit_axis(axis) -> np.ndarray:
    if isinstance(axis, str):
        try:
            return np.array(AXES[axis])
        except KeyError:
            raise ValueError(f"unknown axis {axis!r}; expected x, y, z or a Bloch vector") from None
    n = np.asarray(axis, dtype=float).reshape(-1)
    if n.size != 3:
        raise ValueError(f"Bloch axis must have 3 components, got {n.size}")
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("zero-length Bloch axis")
    return n / norm


def axis_projectors(axis) -> tuple[np.ndarray, np.ndarray]:
    """Eigenprojectors ``(P+, P-)`` of ``n . sigma``."""
    A = bloch_operator(_unit_axis(axis))
    return 0.5 * (IDENTITY_2 + A), 0.5 * (IDENTITY_2 - A)


@dataclass(frozen=True, eq=False)
class Instrument:
    """One measurement step: a CP superoperator per outcome, summing to a TP map."""

    outcomes: tuple
    elements: tuple
    name: str = ""

    def __post_init__(self):
        if len(self.outcomes) != len(self.elements) or not self.outcomes:
            raise ValueError("an instrument needs one element per outcome and at least one outcome")
        total = sum(self.elements)
        if not linops.is_trace_preserving(total, tol=1e-12):
            raise ValueError("instrument elements do not sum to a trace-preserving map")

    def __len__(self):
        return len(self.outcomes)

    @property
    def channel(self) -> np.ndarray:
        """Non-selective map: the sum of all elements."""
        return sum(self.elements)

    def items(self):
        return zip(self.outcomes, self.elements)


def lueders_instrument(axis) -> Instrument:
    """Projective measurement of ``n . sigma`` with Lueders update, outcomes ``+1, -1``."""
    p_plus, p_minus = axis_projectors(axis)
    name = axis if isinstance(axis, str) else "n=" + ",".join(f"{c:g}" for c in _unit_axis(axis))
    return Instrument(outcomes=(1, -1),
                      elements=(linops.sandwich(p_plus), linops.sandwich(p_minus)),
                      name=name)


def kraus_instrument(kraus: dict) -> Instrument:
    """Generic instrument from ``{outcome: [K_1, K_2, ...]}``."""
    outcomes = tuple(kraus)
    elements = tuple(sum(linops.sandwich(K) for K in kraus[a]) for a in outcomes)
    return Instrument(outcomes=outcomes, elements=elements, name="kraus")


def trivial_instrument() -> Instrument:
    """Single-outcome identity intervention (a skipped measurement)."""
    return Instrument(outcomes=((),), elements=(linops.identity_map(2),), name="identity")


def dephasing_map(axis) -> np.ndarray:
    """Full dephasing ``rho -> sum_a P_a rho P_a`` along an axis."""
    return sum(linops.sandwich(P) for P in axis_projectors(axis))


def left_multiplication(A: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> A rho`` (not CP; used for correlators)."""
    return linops.left(A)


@dataclass(frozen=True, eq=False)
class Protocol:
    """Initial qubit state followed by time-ordered measurement steps.

    The last step is the readout.
    """

    initial_state: np.ndarray
    steps: tuple = field(default=())

    def __post_init__(self):
        rho = np.asarray(self.initial_state, dtype=complex)
        if rho.shape != (2, 2):
            raise ValueError("initial state must be a 2x2 density matrix")
        if abs(np.trace(rho) - 1) > 1e-12 or np.max(np.abs(rho - rho.conj().T)) > 1e-12:
            raise ValueError("initial state must be Hermitian with unit trace")
        if np.linalg.eigvalsh(rho).min() < -1e-12:
            raise ValueError("initial state must be positive semidefinite")
        object.__setattr__(self, "initial_state", rho)
        steps = tuple((float(t), inst) for t, inst in self.steps)
        times = [t for t, _ in steps]
        if any(t < 0 for t in times):
            raise ValueError("intervention times must be >= 0")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError(f"intervention times must be non-decreasing, got {times}")
        object.__setattr__(self, "steps", steps)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.steps)

    @property
    def instruments(self) -> tuple[Instrument, ...]:
        return tuple(inst for _, inst in self.steps)

    def at_times(self, *times: float) -> "Protocol":
        """Same instruments moved to new intervention times."""
        if len(times) != len(self.steps):
            raise ValueError(f"expected {len(self.steps)} times, got {len(times)}")
        return Protocol(self.initial_state, tuple(zip(times, self.instruments)))


def sequential_protocol(state: str | np.ndarray, axes: Sequence, times: Sequence[float]) -> Protocol:
    """Protocol of Lueders measurements along ``axes`` at ``times``."""
    rho = state_from_label(state) if isinstance(state, str) else state
    if len(axes) != len(times):
        raise ValueError("need one time per measurement axis")
    return Protocol(rho, tuple((t, lueders_instrument(a)) for t, a in zip(times, axes)))
