"""Resonantly driven two-level emitter watched by an inefficient detector.

Basis convention: index 0 is the ground state, index 1 the excited state,
so the lowering operator is sigma = [[0, 1], [0, 0]].  The plain model is
the driven-dissipative two-level system with the detected fraction eta of
the emission as the monitored channel.  The hybrid model adds a two-state
classical label (d = detected, u = undetected, in that block order) that
tracks which kind of emission happened last; detected emissions reset the
pair to the ground state in d, undetected ones move the label to u, and
the reduced quantum dynamics is identical to the plain model for every
eta.

The waiting-time law between detections is a renewal process.  Its
Laplace transform is a rational function with a cubic denominator; the
time-domain density and CDF follow from partial fractions over the cubic
roots (companion-matrix root finding, confluent handling for
near-degenerate roots).  The thinning sampler draws perfect-detector
intervals and accepts each with probability eta, which realizes the same
law through the geometric series of the transform.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRoots
from .generators import ModelGenerators, JumpTerm, ModelSpec, build, conditional_propagate
from .linalg import HybridOperator
from .trajectories import sample_jump_time

SIGMA = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |-><+|
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
GROUND = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)  # |-><-|

# companion-matrix eigenvalues split an exact double root by ~sqrt(eps),
# about 3e-8, so the detection window must sit above that
ROOT_DEGENERACY_RTOL = 1e-6


@dataclass(frozen=True)
class FluorParams:
    """Rabi frequency, decay rate and detector efficiency."""

    omega: float
    eta: float
    gamma: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")


def build_plain(p: FluorParams) -> ModelSpec:
    """Driven two-level emitter; detected fraction eta of the decay observed."""
    h = 0.5 * p.omega * SIGMA_X
    jumps = [JumpTerm(0, 0, SIGMA, p.gamma * p.eta, observed=True)]
    if p.eta < 1:
        jumps.append(JumpTerm(0, 0, SIGMA, p.gamma * (1 - p.eta), observed=False))
    return ModelSpec(n_classical=1, dim=2, hamiltonians=[h], jumps=tuple(jumps))


def build_hybrid(p: FluorParams) -> ModelSpec:
    """Emitter plus detected/undetected classical label, block order (d, u).

    Emissions that end in d carry rate gamma*eta and are observed;
    emissions that end in u carry rate gamma*(1-eta) and are not.
    """
    h = 0.5 * p.omega * SIGMA_X
    g_d = p.gamma * p.eta
    g_u = p.gamma * (1 - p.eta)
    jumps = [
        JumpTerm(0, 0, SIGMA, g_d, observed=True),
        JumpTerm(1, 0, SIGMA, g_d, observed=True),
    ]
    if p.eta < 1:
        jumps.append(JumpTerm(0, 1, SIGMA, g_u, observed=False))
        jumps.append(JumpTerm(1, 1, SIGMA, g_u, observed=False))
    return ModelSpec(n_classical=2, dim=2, hamiltonians=[h, h], jumps=tuple(jumps))


def initial_plain() -> HybridOperator:
    """Ground state."""
    return HybridOperator(GROUND[np.newaxis])


def initial_hybrid() -> HybridOperator:
    """Ground state in the detected label, empty undetected block."""
    blocks = np.zeros((2, 2, 2), dtype=complex)
    blocks[0] = GROUND
    return HybridOperator(blocks)


def steady_state_quantum(p: FluorParams) -> np.ndarray:
    """Closed-form stationary quantum state in the (ground, excited) basis."""
    g, w = p.gamma, p.omega
    den = g * g + 2 * w * w
    return np.array(
        [[g * g + w * w, 1j * g * w], [-1j * g * w, w * w]], dtype=complex
    ) / den


def steady_state_classical(p: FluorParams) -> np.ndarray:
    """Stationary (d, u) label distribution."""
    return np.array([p.eta, 1 - p.eta])


def waiting_laplace(p: FluorParams, u) -> np.ndarray:
    """Laplace transform of the inter-detection waiting-time density."""
    u = np.asarray(u, dtype=complex)
    g, w, eta = p.gamma, p.omega, p.eta
    den = u * (u + g) * (2 * u + g) + (2 * u + g * eta) * w * w
    return g * eta * w * w / den


def _denominator_coeffs(p: FluorParams) -> np.ndarray:
    g, w, eta = p.gamma, p.omega, p.eta
    return np.array([2.0, 3.0 * g, g * g + 2 * w * w, g * eta * w * w])


@functools.lru_cache(maxsize=64)
def _waiting_modes(p: FluorParams):
    """Partial-fraction data for the waiting-time density.

    Returns ("distinct", roots, coeffs) with density sum_i c_i exp(r_i t),
    or ("confluent", (a, b), (A, B, C)) with density (A + B t) exp(a t) +
    C exp(b t) when two roots coincide within ROOT_DEGENERACY_RTOL.
    """
    if p.omega == 0:
        raise ValueError("omega = 0 never emits; the waiting-time law is degenerate")
    coeffs = _denominator_coeffs(p)
    k_num = coeffs[-1]  # gamma * eta * omega^2, also the u=0 denominator value
    roots = np.roots(coeffs)
    lead = coeffs[0]
    pairs = [(i, j) for i in range(3) for j in range(i + 1, 3)]
    close = [
        (i, j)
        for i, j in pairs
        if abs(roots[i] - roots[j])
        <= ROOT_DEGENERACY_RTOL * max(1.0, abs(roots[i]), abs(roots[j]))
    ]
    if not close:
        dprime = np.polyval(np.polyder(coeffs), roots)
        return ("distinct", roots, k_num / dprime)
    if len(close) > 1:
        raise ValueError("triple denominator root; waiting-time inversion undefined")
    warnings.warn(
        f"waiting-time denominator roots nearly coincide for {p}; "
        "using confluent partial fractions",
        DegenerateRoots,
        stacklevel=3,
    )
    i, j = close[0]
    a = 0.5 * (roots[i] + roots[j])
    b = roots[3 - i - j]
    cb = k_num / (lead * (a - b))
    ca = -k_num / (lead * (a - b) ** 2)
    cc = k_num / (lead * (b - a) ** 2)
    return ("confluent", (a, b), (ca, cb, cc))


def waiting_density(p: FluorParams, t) -> np.ndarray:
    """Time-domain waiting-time density between consecutive detections."""
    t = np.asarray(t, dtype=float)
    kind, roots, coeffs = _waiting_modes(p)
    tt = t[..., np.newaxis]
    if kind == "distinct":
        val = np.sum(coeffs * np.exp(roots * tt), axis=-1).real
    else:
        a, b = roots
        ca, cb, cc = coeffs
        val = ((ca + cb * t) * np.exp(a * t) + cc * np.exp(b * t)).real
    return val if val.shape else float(val)


def waiting_cdf(p: FluorParams, t) -> np.ndarray:
    """Closed-form integral of the waiting-time density from 0 to t."""
    t = np.asarray(t, dtype=float)
    kind, roots, coeffs = _waiting_modes(p)
    tt = t[..., np.newaxis]
    if kind == "distinct":
        val = np.sum(coeffs / roots * (np.exp(roots * tt) - 1.0), axis=-1).real
    else:
        a, b = roots
        ca, cb, cc = coeffs
        ea = np.exp(a * t)
        val = (
            ca * (ea - 1.0) / a
            + cb * ((t / a) * ea - (ea - 1.0) / (a * a))
            + cc * (np.exp(b * t) - 1.0) / b
        ).real
    return val if val.shape else float(val)


@functools.lru_cache(maxsize=16)
def _perfect_detector_engine(omega: float, gamma: float):
    p1 = FluorParams(omega=omega, eta=1.0, gamma=gamma)
    return build(build_plain(p1)), initial_plain()


@functools.lru_cache(maxsize=32)
def _inefficient_engine(p: FluorParams, hybrid: bool):
    if hybrid:
        return build(build_hybrid(p)), initial_hybrid()
    return build(build_plain(p)), initial_plain()


def inversion_sampler(
    p: FluorParams, rng: np.random.Generator, hybrid: bool = True
) -> float:
    """One inefficient-detector waiting time by survival-probability inversion.

    Uses the reset state, which for this model is also the initial state,
    so the sample follows the renewal inter-detection law.
    """
    if p.omega == 0:
        raise ValueError("omega = 0 never emits; the waiting-time law is degenerate")
    g, reset = _inefficient_engine(p, hybrid)
    return _draw_interval(g, reset, rng, 200.0 / p.gamma)


def _draw_interval(
    g1: ModelGenerators,
    reset: HybridOperator,
    rng: np.random.Generator,
    t_block: float,
) -> float:
    offset = 0.0
    state = reset
    while True:
        tau = sample_jump_time(g1, state, t_block, rng)
        if tau is not None:
            return offset + tau
        offset += t_block
        state = conditional_propagate(g1, state, t_block)


def thinning_sampler(p: FluorParams, rng: np.random.Generator) -> float:
    """One inefficient-detector waiting time by geometric thinning.

    Draws perfect-detector intervals and rejects each with probability
    1 - eta; the detected interval is the sum of the rejected ones plus
    the accepted one.
    """
    if p.omega == 0:
        raise ValueError("omega = 0 never emits; the waiting-time law is degenerate")
    g1, reset = _perfect_detector_engine(p.omega, p.gamma)
    n_draws = rng.geometric(p.eta)
    t_block = 200.0 / p.gamma
    return sum(_draw_interval(g1, reset, rng, t_block) for _ in range(n_draws))
