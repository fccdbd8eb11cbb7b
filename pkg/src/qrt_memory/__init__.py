"""Multitime measurement statistics of a qubit coupled to a Lorentzian bath.

Exact joint distributions come from the pseudomode embedding; the quantum
regression theorem (QRT) gives the Markovian-style approximation built from the
reduced dynamical maps alone. The package quantifies the gap between the two.
"""
__version__ = "0.1.0"

from .instruments import (Instrument, Protocol, lueders_instrument, sequential_protocol,
                          state_from_label, trivial_instrument)
from .model import FockTruncationError, ModelParams, n_thermal
from .multitime import (Diagnostics, FockConvergenceError, JointDistribution, exact_joint,
                        kolmogorov_distance, qrt_joint, reduced_map)
from .perturbation import corrected_joint, epsilon_lambda2, phi_q_second_order, second_order_kernel
from .quantifiers import (avg_epsilon_qrt, avg_epsilon_qrt_3, avg_n_witness, epsilon_qrt,
                          epsilon_qrt_3, fibonacci_sphere, q_witness)

__all__ = [
    "Diagnostics", "FockConvergenceError", "FockTruncationError", "Instrument", "JointDistribution",
    "ModelParams", "Protocol", "avg_epsilon_qrt", "avg_epsilon_qrt_3", "avg_n_witness",
    "corrected_joint", "epsilon_lambda2", "epsilon_qrt", "epsilon_qrt_3", "exact_joint",
    "fibonacci_sphere", "kolmogorov_distance", "lueders_instrument", "n_thermal",
    "phi_q_second_order", "q_witness", "qrt_joint", "reduced_map", "second_order_kernel",
    "sequential_protocol", "state_from_label", "trivial_instrument",
]
