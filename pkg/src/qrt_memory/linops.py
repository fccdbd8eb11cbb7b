"""Dense linear-operator core.

Operators are plain ``numpy`` complex arrays. Superoperators act on operators
vectorized by **column stacking**, so that::

    vec(A @ X @ B) == kron(B.T, A) @ vec(X)

Every superoperator in the package is built through :func:`sandwich`,
:func:`left`, :func:`right` or :func:`lift` so the convention lives in one place.
"""
from __future__ import annotations

import math

import numpy as np

CP_TOL = 1e-9
TP_TOL = 1e-10


def vec(X: np.ndarray) -> np.ndarray:
    """Column-stack a square matrix into a 1-D vector of length ``d**2``."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"vec expects a square matrix, got shape {X.shape}")
    return X.reshape(-1, order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v).reshape(-1)
    if d is None:
        d = math.isqrt(v.size)
    if d * d != v.size:
        raise ValueError(f"vector of length {v.size} is not the vec of a {d}x{d} matrix")
    return v.reshape((d, d), order="F")


def kron(*ops: np.ndarray) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


def dag(A: np.ndarray) -> np.ndarray:
    return A.conj().T


def sandwich(A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Superoperator of ``X -> A X B`` (``B = A^dagger`` when omitted)."""
    A = np.asarray(A, dtype=complex)
    B = dag(A) if B is None else np.asarray(B, dtype=complex)
    return np.kron(B.T, A)


def left(A: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> A X``."""
    A = np.asarray(A, dtype=complex)
    return np.kron(np.eye(A.shape[0]), A)


def right(B: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> X B``."""
    B = np.asarray(B, dtype=complex)
    return np.kron(B.T, np.eye(B.shape[0]))


def commutator(H: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> [H, X]``."""
    return left(H) - right(H)


def dissipator(L: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> L X L^+ - {L^+ L, X}/2``."""
    LdL = dag(L) @ L
    return sandwich(L) - 0.5 * (left(LdL) + right(LdL))


def identity_map(d: int) -> np.ndarray:
    return np.eye(d * d, dtype=complex)


def superop_dim(Phi: np.ndarray) -> int:
    n = Phi.shape[0]
    d = math.isqrt(n)
    if d * d != n or Phi.shape != (n, n):
        raise ValueError(f"not a square superoperator on d x d matrices: shape {Phi.shape}")
    return d


def apply(Phi: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Apply a superoperator to an operator."""
    d = X.shape[0]
    return unvec(Phi @ vec(X), d)


# ---------------------------------------------------------------------------
# Bipartite structure (first factor A, second factor B, ordering kron(A, B))
# ---------------------------------------------------------------------------


def partial_trace(X: np.ndarray, dims: tuple[int, int], subsystem: str = "B") -> np.ndarray:
    """Trace out subsystem ``"A"`` or ``"B"`` of an operator on ``H_A (x) H_B``."""
    dA, dB = dims
    X = np.asarray(X)
    if X.shape != (dA * dB, dA * dB):
        raise ValueError(f"dims {dims} do not factor a matrix of shape {X.shape}")
    T = X.reshape(dA, dB, dA, dB)
    if subsystem == "B":
        return np.einsum("ibjb->ij", T)
    if subsystem == "A":
        return np.einsum("aiaj->ij", T)
    raise ValueError(f"subsystem must be 'A' or 'B', got {subsystem!r}")


def lift(Phi: np.ndarray, dB: int) -> np.ndarray:
    """Superoperator ``Phi (x) id_B`` on ``H_A (x) H_B`` for a superoperator ``Phi`` on ``A``."""
    dA = superop_dim(Phi)
    d = dA * dB
    # vec index of X[(a,m),(a',m')] is (a*dB + m) + d*(a'*dB + m')
    P = Phi.reshape(dA, dA, dA, dA, order="F")  # P[a, a', r, r'] acting on X[r, r']
    eye = np.eye(dB)
    T = np.einsum("abrs,mn,pq->ambprnsq", P, eye, eye)
    # T indices: out (a, m, a', m') in row-major blocks, in (r, n, r', n')
    T = T.reshape(d, d, d, d)  # [out_row, out_col, in_row, in_col]
    return T.transpose(1, 0, 3, 2).reshape(d * d, d * d)


def ptrace_superop(dA: int, dB: int) -> np.ndarray:
    """Rectangular map ``vec(X) -> vec(Tr_B X)``, shape ``(dA**2, (dA*dB)**2)``."""
    d = dA * dB
    out = np.zeros((dA * dA, d * d), dtype=complex)
    for a in range(dA):
        for ap in range(dA):
            for m in range(dB):
                out[a + dA * ap, (a * dB + m) + d * (ap * dB + m)] = 1.0
    return out


def append_superop(R: np.ndarray, dA: int) -> np.ndarray:
    """Rectangular map ``vec(X) -> vec(X (x) R)``, shape ``((dA*dB)**2, dA**2)``."""
    R = np.asarray(R, dtype=complex)
    out = np.empty(((dA * R.shape[0]) ** 2, dA * dA), dtype=complex)
    for j in range(dA):
        for i in range(dA):
            E = np.zeros((dA, dA))
            E[i, j] = 1.0
            out[:, i + dA * j] = vec(np.kron(E, R))
    return out


# ---------------------------------------------------------------------------
# Matrix exponential
# ---------------------------------------------------------------------------

# Pade degrees and the 1-norm bounds below which they reach unit roundoff
# (Higham, SIAM J. Matrix Anal. Appl. 26, 1179 (2005), Table 2.3).
_PADE_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1,
               7: 9.504178996162932e-1, 9: 2.097847961257068e0,
               13: 5.371920351148152e0}


def _pade_coefficients(m: int) -> list[float]:
    # c_k = (2m-k)! m! / ((2m)! k! (m-k)!)
    return [math.factorial(2 * m - k) * math.factorial(m)
            / (math.factorial(2 * m) * math.factorial(k) * math.factorial(m - k))
            for k in range(m + 1)]


def expm(M: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a diagonal Pade approximant.

    The Pade degree m is the smallest of 3, 5, 7, 9, 13 whose backward-error bound
    theta_m exceeds ``||M||_1``; above theta_13 the matrix is scaled by ``2**-s``
    so that the degree-13 approximant applies, and the result is squared s times.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expm expects a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("expm input has non-finite entries")
    n = M.shape[0]
    A = M.astype(complex if np.iscomplexobj(M) else float)
    ident = np.eye(n, dtype=A.dtype)
    norm = np.linalg.norm(A, 1)

    s = 0
    for m in (3, 5, 7, 9):
        if norm <= _PADE_THETA[m]:
            break
    else:
        m = 13
        if norm > _PADE_THETA[13]:
            s = int(math.ceil(math.log2(norm / _PADE_THETA[13])))
            A = A / 2.0**s

    c = _pade_coefficients(m)
    A2 = A @ A
    if m < 13:
        powers = [ident, A2]
        for _ in range(2, m // 2 + 1):
            powers.append(powers[-1] @ A2)
        U = A @ sum(c[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
        V = sum(c[2 * k] * powers[k] for k in range(m // 2 + 1))
    else:
        A4 = A2 @ A2
        A6 = A4 @ A2
        U = A @ (A6 @ (c[13] * A6 + c[11] * A4 + c[9] * A2)
                 + c[7] * A6 + c[5] * A4 + c[3] * A2 + c[1] * ident)
        V = (A6 @ (c[12] * A6 + c[10] * A4 + c[8] * A2)
             + c[6] * A6 + c[4] * A4 + c[2] * A2 + c[0] * ident)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def expm_blocked(M: np.ndarray, labels) -> np.ndarray:
    """``expm(M)`` for a matrix that does not couple indices with different labels.

    Each label class is exponentiated on its own, which saves a factor of about
    ``k**2`` for k equal blocks. Falls back to the dense exponential when ``M``
    has any entry coupling two classes.
    """
    M = np.asarray(M)
    labels = np.asarray(labels)
    if labels.shape != (M.shape[0],):
        raise ValueError("need one label per row of M")
    if np.any(M[labels[:, None] != labels[None, :]] != 0):
        return expm(M)
    out = np.zeros_like(M, dtype=np.result_type(M, float))
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        out[np.ix_(idx, idx)] = expm(M[np.ix_(idx, idx)])
    return out


# ---------------------------------------------------------------------------
# Channel checks
# ---------------------------------------------------------------------------


def choi(Phi: np.ndarray) -> np.ndarray:
    """Choi matrix ``sum_ij E_ij (x) Phi(E_ij)`` (input factor first)."""
    d = superop_dim(Phi)
    # Phi[a + d a', r + d r'] -> C[(r, a), (r', a')]
    P = Phi.reshape(d, d, d, d, order="F")
    return P.transpose(2, 0, 3, 1).reshape(d * d, d * d)


def is_completely_positive(Phi: np.ndarray, tol: float = CP_TOL) -> bool:
    C = choi(Phi)
    if np.max(np.abs(C - dag(C))) > tol:
        return False
    return bool(np.linalg.eigvalsh(0.5 * (C + dag(C))).min() >= -tol)


def is_trace_preserving(Phi: np.ndarray, tol: float = TP_TOL) -> bool:
    d = superop_dim(Phi)
    tr = vec(np.eye(d)).conj()
    return bool(np.max(np.abs(tr @ Phi - tr)) <= tol)
