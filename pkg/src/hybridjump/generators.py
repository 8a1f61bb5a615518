"""Generator assembly for hybrid Lindblad rate equations.

A model is declared as per-label Hamiltonians plus a list of jump terms.
A jump term (source R', target R, operator A, rate g) contributes the gain
``g * A rho^{R'} A^dag`` to the target block and the anticommutator loss
``-g * (A^dag A rho^{R'} + rho^{R'} A^dag A)/2`` to the source block, so
the assembled generator is trace preserving by construction.  Jump terms
flagged `observed` collect their gain parts into the monitored channel J;
Hamiltonians, losses and unobserved gains form D, and L = D + J.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .configfile import parse_bool, parse_flat, parse_matrix
from .errors import ConfigError, Extinct, NullJump
from .linalg import (
    HybridOperator,
    HybridSuperop,
    apply,
    devectorize,
    dual,
    symmetrize,
    vectorize,
)

SURVIVAL_FLOOR = 1e-14  # below this, renormalization is numerically meaningless


@dataclass(frozen=True)
class JumpTerm:
    """One transition channel: source label -> target label with operator and rate."""

    source: int
    target: int
    operator: np.ndarray
    rate: float
    observed: bool = False


@dataclass(frozen=True)
class ModelSpec:
    """Declarative model: per-label Hamiltonians and a list of jump terms.

    `hamiltonians` holds one d x d matrix per classical label (None means
    all zero).  Label order is the declaration order and fixes the block
    order of every HybridOperator built for this model.
    """

    n_classical: int
    dim: int
    hamiltonians: Optional[Sequence[np.ndarray]] = None
    jumps: Sequence[JumpTerm] = field(default_factory=tuple)

    def validate(self):
        if self.n_classical < 1 or self.dim < 1:
            raise ValueError("need n_classical >= 1 and dim >= 1")
        if self.hamiltonians is not None:
            if len(self.hamiltonians) != self.n_classical:
                raise ValueError("need one Hamiltonian per classical label")
            for h in self.hamiltonians:
                if np.shape(h) != (self.dim, self.dim):
                    raise ValueError(f"Hamiltonian has shape {np.shape(h)}")
        for term in self.jumps:
            if term.rate < 0:
                raise ValueError(f"negative rate {term.rate}")
            for label in (term.source, term.target):
                if not 0 <= label < self.n_classical:
                    raise ValueError(f"classical label {label} out of range")
            if np.shape(term.operator) != (self.dim, self.dim):
                raise ValueError(f"jump operator has shape {np.shape(term.operator)}")


@dataclass(frozen=True)
class ModelGenerators:
    """Assembled L, D, J with L = D + J and L trace preserving."""

    L: HybridSuperop
    D: HybridSuperop
    J: HybridSuperop

    @property
    def n_classical(self) -> int:
        return self.L.n_classical

    @property
    def dim(self) -> int:
        return self.L.dim

    @classmethod
    def from_superops(cls, L: HybridSuperop, J: HybridSuperop) -> "ModelGenerators":
        """Escape hatch for arbitrary generators; D is defined as L - J."""
        return cls(L=L, D=L - J, J=J)


def _hamiltonian_block(h: np.ndarray) -> np.ndarray:
    d = h.shape[0]
    eye = np.eye(d, dtype=complex)
    # vec(-i[H, rho]) = -i (kron(I, H) - kron(H^T, I)) vec(rho), column stacking
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def _gain_block(a: np.ndarray) -> np.ndarray:
    # vec(A rho A^dag) = kron(conj(A), A) vec(rho)
    return np.kron(a.conj(), a)


def _loss_block(a: np.ndarray) -> np.ndarray:
    d = a.shape[0]
    eye = np.eye(d, dtype=complex)
    aa = a.conj().T @ a
    return -0.5 * (np.kron(eye, aa) + np.kron(aa.T, eye))


def build(spec: ModelSpec) -> ModelGenerators:
    """Assemble the generators of a hybrid Lindblad rate equation."""
    spec.validate()
    n_c, d = spec.n_classical, spec.dim
    size = n_c * d * d
    dd = d * d
    Dm = np.zeros((size, size), dtype=complex)
    Jm = np.zeros((size, size), dtype=complex)

    if spec.hamiltonians is not None:
        for r, h in enumerate(spec.hamiltonians):
            h = np.asarray(h, dtype=complex)
            Dm[r * dd : (r + 1) * dd, r * dd : (r + 1) * dd] += _hamiltonian_block(h)

    for term in spec.jumps:
        a = np.asarray(term.operator, dtype=complex)
        gain = term.rate * _gain_block(a)
        tgt = (term.target * dd, (term.target + 1) * dd)
        src = (term.source * dd, (term.source + 1) * dd)
        if term.observed:
            Jm[tgt[0] : tgt[1], src[0] : src[1]] += gain
        else:
            Dm[tgt[0] : tgt[1], src[0] : src[1]] += gain
        Dm[src[0] : src[1], src[0] : src[1]] += term.rate * _loss_block(a)

    D = HybridSuperop(Dm, n_c, d)
    J = HybridSuperop(Jm, n_c, d)
    return ModelGenerators(L=D + J, D=D, J=J)


def reduce_quantum(h: HybridOperator) -> np.ndarray:
    """Unconditional quantum state: sum of the blocks."""
    return h.blocks.sum(axis=0)


def reduce_classical(h: HybridOperator) -> np.ndarray:
    """Classical marginal: the trace of each block."""
    return np.einsum("rii->r", h.blocks).real


def measurement_map(g: ModelGenerators, rho: HybridOperator) -> HybridOperator:
    """Post-detection transformation: J rho normalized to unit total trace."""
    w = apply(g.J, rho)
    s = w.total_trace().real
    if s <= SURVIVAL_FLOOR:
        raise NullJump(f"jump weight {s:.3e}: state cannot emit")
    return symmetrize(HybridOperator(w.blocks / s))


def conditional_propagate(g: ModelGenerators, rho: HybridOperator, dt: float) -> HybridOperator:
    """No-detection evolution over dt, renormalized to unit total trace."""
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0.0:
        return rho
    w = sla.expm(g.D.matrix * dt) @ vectorize(rho)
    out = devectorize(w, g.n_classical, g.dim)
    s = out.total_trace().real
    if s < SURVIVAL_FLOOR:
        raise Extinct(f"survival probability {s:.3e} over dt={dt}")
    return symmetrize(HybridOperator(out.blocks / s))


def uniform_grid(t_end: float, dt: float, t_start: float = 0.0) -> np.ndarray:
    """Uniform time grid; dt must divide the span within 1e-9."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    span = t_end - t_start
    n = round(span / dt)
    if n < 0 or abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"dt={dt} does not divide the span {span} within 1e-9")
    return t_start + dt * np.arange(n + 1)


def master_solve(g: ModelGenerators, rho0: HybridOperator, times: np.ndarray):
    """Deterministic solution rho_t = exp(L t) rho_0 on the given grid.

    Uniform grids starting at 0 reuse a single cached step propagator.
    Returns one HybridOperator per grid time.
    """
    times = np.asarray(times, dtype=float)
    n_c, d = g.n_classical, g.dim
    if times.size == 0:
        return []
    steps = np.diff(times)
    uniform = (
        times[0] == 0.0
        and steps.size > 0
        and np.all(np.abs(steps - steps[0]) <= 1e-12 * max(1.0, steps[0]))
    )
    out = []
    if uniform:
        step = sla.expm(g.L.matrix * steps[0])
        v = vectorize(rho0)
        out.append(rho0)
        for _ in range(steps.size):
            v = step @ v
            out.append(symmetrize(devectorize(v, n_c, d)))
    else:
        for t in times:
            if t < 0:
                raise ValueError("grid times must be >= 0")
            m = sla.expm(g.L.matrix * t) if t > 0 else None
            v = vectorize(rho0) if m is None else m @ vectorize(rho0)
            out.append(symmetrize(devectorize(v, n_c, d)))
    return out


class StepCache:
    """Per-(model, dt) propagator cache used by the forward and backward engines.

    Holds exp(D dt), exp(L dt) and the dual-channel matrices, computed once
    and shared read-only.  Off-grid intervals always use a fresh expm call.
    """

    def __init__(self, g: ModelGenerators, dt: float):
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        self.generators = g
        self.dt = dt
        self.D_mat = g.D.matrix
        self.J_mat = g.J.matrix
        self.step_D = sla.expm(g.D.matrix * dt)
        self.step_L = sla.expm(g.L.matrix * dt)
        dual_D = dual(g.D)
        self.dual_D_mat = dual_D.matrix
        self.dual_J_mat = dual(g.J).matrix
        self.step_dual_D = sla.expm(dual_D.matrix * dt)


def load_model_file(path):
    """Load (ModelSpec, initial HybridOperator) from a flat key = value file.

    Keys: n_classical, d, hamiltonian[R], jump[i].{source,target,operator,
    rate,observed} and optional rho0[R] blocks (default: |0><0| in label 0).
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = parse_flat(fh.read())
    try:
        n_c = int(raw.pop("n_classical"))
        d = int(raw.pop("d"))
    except KeyError as exc:
        raise ConfigError(f"model file missing key {exc}") from None

    hams = None
    ham_keys = [k for k in raw if k.startswith("hamiltonian[")]
    if ham_keys:
        hams = [np.zeros((d, d), dtype=complex) for _ in range(n_c)]
        for key in ham_keys:
            r = _bracket_index(key, "hamiltonian")
            if not 0 <= r < n_c:
                raise ConfigError(f"{key}: label out of range")
            hams[r] = parse_matrix(raw.pop(key), shape=(d, d))

    jumps = []
    jump_ids = sorted(
        {_bracket_index(k, "jump") for k in raw if k.startswith("jump[")}
    )
    for i in jump_ids:
        prefix = f"jump[{i}]."
        fields = {k[len(prefix):]: raw.pop(k) for k in list(raw) if k.startswith(prefix)}
        try:
            jumps.append(
                JumpTerm(
                    source=int(fields.pop("source")),
                    target=int(fields.pop("target")),
                    operator=parse_matrix(fields.pop("operator"), shape=(d, d)),
                    rate=float(fields.pop("rate")),
                    observed=parse_bool(fields.pop("observed", "false")),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"jump[{i}] missing field {exc}") from None
        if fields:
            raise ConfigError(f"jump[{i}] has unknown fields {sorted(fields)}")

    rho0_keys = [k for k in raw if k.startswith("rho0[")]
    blocks = np.zeros((n_c, d, d), dtype=complex)
    if rho0_keys:
        for key in rho0_keys:
            r = _bracket_index(key, "rho0")
            if not 0 <= r < n_c:
                raise ConfigError(f"{key}: label out of range")
            blocks[r] = parse_matrix(raw.pop(key), shape=(d, d))
    else:
        blocks[0, 0, 0] = 1.0
    if raw:
        raise ConfigError(f"model file has unknown keys {sorted(raw)}")

    spec = ModelSpec(n_classical=n_c, dim=d, hamiltonians=hams, jumps=tuple(jumps))
    spec.validate()
    return spec, HybridOperator(blocks)


def _bracket_index(key: str, stem: str) -> int:
    head = key.split(".", 1)[0]
    if not (head.startswith(stem + "[") and head.endswith("]")):
        raise ConfigError(f"malformed key {key!r}")
    try:
        return int(head[len(stem) + 1 : -1])
    except ValueError:
        raise ConfigError(f"malformed index in key {key!r}") from None
