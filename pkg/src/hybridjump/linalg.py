"""Dense linear algebra over hybrid quantum-classical operators.

A hybrid operator is an ordered family of complex d x d blocks, one per
classical label R.  Superoperators act on the column-stacked vectorization
of the blocks, concatenated in label order.  Duals are taken with respect
to the bilinear pairing sum_R Tr[A_R B_R].

All values are immutable after construction and every operation here is a
pure function, so everything can be shared read-only across workers.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=complex)
    a.flags.writeable = False
    return a


class HybridOperator:
    """Ordered family of complex d x d blocks indexed by a classical label.

    Blocks are stored as an (n_classical, d, d) array. Label order is the
    declaration order of the model and is part of the public contract.
    States carry Hermitian PSD blocks with unit total trace; effect
    operators carry Hermitian blocks without normalization.
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks):
        blocks = np.asarray(blocks, dtype=complex)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise ValueError(
                f"blocks must have shape (n_classical, d, d), got {blocks.shape}"
            )
        if blocks.shape[0] < 1 or blocks.shape[1] < 1:
            raise ValueError("need n_classical >= 1 and d >= 1")
        if not np.all(np.isfinite(blocks)):
            raise ValueError("blocks contain non-finite entries")
        self.blocks = _readonly(blocks)

    @property
    def n_classical(self) -> int:
        return self.blocks.shape[0]

    @property
    def dim(self) -> int:
        return self.blocks.shape[1]

    @classmethod
    def zeros(cls, n_classical: int, d: int) -> "HybridOperator":
        return cls(np.zeros((n_classical, d, d), dtype=complex))

    @classmethod
    def identity(cls, n_classical: int, d: int) -> "HybridOperator":
        """The trace-dual element: the identity matrix in every block."""
        return cls(np.broadcast_to(np.eye(d, dtype=complex), (n_classical, d, d)))

    def block(self, r: int) -> np.ndarray:
        return self.blocks[r]

    def total_trace(self) -> complex:
        return complex(np.einsum("rii->", self.blocks))

    def __repr__(self):
        return f"HybridOperator(n_classical={self.n_classical}, d={self.dim})"


class HybridSuperop:
    """Square matrix acting on vectorized hybrid operators."""

    __slots__ = ("matrix", "n_classical", "dim")

    def __init__(self, matrix, n_classical: int, d: int):
        matrix = np.asarray(matrix, dtype=complex)
        size = n_classical * d * d
        if matrix.shape != (size, size):
            raise ValueError(
                f"matrix shape {matrix.shape} inconsistent with "
                f"n_classical={n_classical}, d={d}"
            )
        if not np.all(np.isfinite(matrix)):
            raise ValueError("superoperator contains non-finite entries")
        self.matrix = _readonly(matrix)
        self.n_classical = n_classical
        self.dim = d

    @classmethod
    def zeros(cls, n_classical: int, d: int) -> "HybridSuperop":
        size = n_classical * d * d
        return cls(np.zeros((size, size), dtype=complex), n_classical, d)

    @classmethod
    def identity(cls, n_classical: int, d: int) -> "HybridSuperop":
        size = n_classical * d * d
        return cls(np.eye(size, dtype=complex), n_classical, d)

    def _check_same_space(self, other: "HybridSuperop"):
        if self.n_classical != other.n_classical or self.dim != other.dim:
            raise ValueError("superoperators act on different hybrid spaces")

    def __matmul__(self, other: "HybridSuperop") -> "HybridSuperop":
        self._check_same_space(other)
        return HybridSuperop(self.matrix @ other.matrix, self.n_classical, self.dim)

    def __add__(self, other: "HybridSuperop") -> "HybridSuperop":
        self._check_same_space(other)
        return HybridSuperop(self.matrix + other.matrix, self.n_classical, self.dim)

    def __sub__(self, other: "HybridSuperop") -> "HybridSuperop":
        self._check_same_space(other)
        return HybridSuperop(self.matrix - other.matrix, self.n_classical, self.dim)

    def __repr__(self):
        return f"HybridSuperop(n_classical={self.n_classical}, d={self.dim})"


def vectorize(h: HybridOperator) -> np.ndarray:
    """Column-stack each block and concatenate the blocks in label order."""
    return h.blocks.transpose(0, 2, 1).reshape(-1).copy()


def devectorize(vec: np.ndarray, n_classical: int, d: int) -> HybridOperator:
    vec = np.asarray(vec, dtype=complex)
    if vec.shape != (n_classical * d * d,):
        raise ValueError(
            f"vector of length {vec.size} cannot hold {n_classical} blocks of dim {d}"
        )
    return HybridOperator(vec.reshape(n_classical, d, d).transpose(0, 2, 1))


def apply(s: HybridSuperop, h: HybridOperator) -> HybridOperator:
    if s.n_classical != h.n_classical or s.dim != h.dim:
        raise ValueError("superoperator and operator act on different hybrid spaces")
    return devectorize(s.matrix @ vectorize(h), s.n_classical, s.dim)


def expm(s: HybridSuperop, t: float) -> HybridSuperop:
    """Propagator exp(S*t), via scaling-and-squaring with a Pade approximant.

    Valid for non-normal generators; no eigendecomposition is assumed.
    """
    if t < 0:
        raise ValueError(f"propagation time must be >= 0, got {t}")
    if t == 0.0:
        return HybridSuperop.identity(s.n_classical, s.dim)
    return HybridSuperop(sla.expm(s.matrix * t), s.n_classical, s.dim)


def hs_pairing(a: HybridOperator, b: HybridOperator) -> complex:
    """Blockwise trace pairing sum_R Tr[A_R B_R] (bilinear, no conjugation)."""
    if a.n_classical != b.n_classical or a.dim != b.dim:
        raise ValueError("operands live in different hybrid spaces")
    return complex(np.einsum("rij,rji->", a.blocks, b.blocks))


def _block_transpose_perm(n_classical: int, d: int) -> np.ndarray:
    """Index permutation realizing the blockwise transpose on vectorized operators."""
    idx = np.arange(n_classical * d * d)
    r, k = np.divmod(idx, d * d)
    j, i = np.divmod(k, d)
    return r * d * d + i * d + j


def dual(s: HybridSuperop) -> HybridSuperop:
    """Adjoint with respect to hs_pairing: Tr[(A|S|rho)] = Tr[(rho|S#|A)].

    For the bilinear pairing this is P S^T P with P the blockwise
    vec-transpose permutation, so the identity holds to round-off.
    """
    perm = _block_transpose_perm(s.n_classical, s.dim)
    m = s.matrix.T[np.ix_(perm, perm)]
    return HybridSuperop(m, s.n_classical, s.dim)


def symmetrize(h: HybridOperator) -> HybridOperator:
    """Blockwise (A + A^dagger)/2; suppresses round-off Hermiticity drift."""
    b = h.blocks
    return HybridOperator(0.5 * (b + b.conj().transpose(0, 2, 1)))


def check_state(h: HybridOperator, herm_tol=1e-10, eig_tol=1e-10, trace_tol=1e-9):
    """Raise ValueError unless h is Hermitian, PSD and unit-trace within tolerance."""
    b = h.blocks
    herm = np.max(np.abs(b - b.conj().transpose(0, 2, 1)))
    if herm > herm_tol:
        raise ValueError(f"blocks deviate from Hermitian by {herm:.3e}")
    sym = 0.5 * (b + b.conj().transpose(0, 2, 1))
    eigmin = min(np.linalg.eigvalsh(sym[r]).min() for r in range(h.n_classical))
    if eigmin < -eig_tol:
        raise ValueError(f"block eigenvalue {eigmin:.3e} below -{eig_tol}")
    tr = h.total_trace()
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"total trace {tr} deviates from 1")


def check_classical_dist(p: np.ndarray, neg_tol=1e-12, sum_tol=1e-9):
    """Raise ValueError unless p is a probability vector within tolerance."""
    p = np.asarray(p, dtype=float)
    if p.min() < -neg_tol:
        raise ValueError(f"negative probability {p.min():.3e}")
    if abs(p.sum() - 1.0) > sum_tol:
        raise ValueError(f"probabilities sum to {p.sum()}")
