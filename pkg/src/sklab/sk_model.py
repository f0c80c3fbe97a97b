"""Exact small-N thermodynamics by configuration enumeration.

The Hamiltonian is the full double sum, diagonal included,

    H(sigma) = (beta / sqrt(2)) sum_{i,j} g_ij sigma_i sigma_j + h sum_i sigma_i,

matching interaction entries of variance 1/N that are independent over all
(i, j).  Quenched quantities enumerate the 2^N configurations; the
conditionally annealed first and second moments enumerate the same
configurations (pairs, for the second moment) against the explicit
conditional covariance of the projected matrix: conditioning on the first
k cavity readouts leaves

    E_k exp[(beta N / sqrt(2)) <g^(k+1) s, s>]
        = exp[(beta^2 N / 4) (1 - sum_{r<=k} <phi^(r), s>^2)^2],

and for a pair (s, t) the same Gaussian computation produces the two
single-replica squares plus twice the squared cross term
[<s,t> - sum_r <s,phi^(r)><t,phi^(r)>]^2.

Enumeration is vectorized over contiguous index blocks in a fixed order
and accumulated with a running log-sum-exp, so results are deterministic
and stable for exponents of size O(N).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .cavity_recursion import RecursionState
from .order_params import ModelParams, OrderParams
from .vectorspace import Disorder, inner, symmetrize

__all__ = [
    "EnumerationLimitError",
    "TiltedMeasure",
    "MAX_SINGLE_N",
    "MAX_PAIR_N",
    "spin_blocks",
    "streaming_log_sum_exp",
    "hamiltonian",
    "log_partition_exact",
    "gibbs_magnetizations",
    "conditional_first_moment",
    "conditional_first_moment_factored",
    "conditional_second_moment",
    "f_nk",
    "chi_gap",
    "tap_iterate",
    "tilted_measure",
]

MAX_SINGLE_N = 24   # 2^N configurations
MAX_PAIR_N = 13     # 4^N configuration pairs
_BLOCK_BITS = 16

_LOG2 = np.log(2.0)
_SQRT2 = np.sqrt(2.0)


class EnumerationLimitError(ValueError):
    """System size beyond the exact-enumeration limit."""


def _check_spins(sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 1 or not np.all(np.abs(sigma) == 1.0):
        raise ValueError("spin configuration must be a 1-d array over {-1, +1}")
    return sigma


def spin_blocks(n: int, block_bits: int = _BLOCK_BITS) -> Iterator[np.ndarray]:
    """Yield all 2^n sign configurations as (rows, n) blocks of +-1 floats.

    Row `i` encodes integer `start + i`, bit j giving spin j; the block
    order is the fixed ascending-integer order, so any blockwise reduction
    merged in iteration order is bit-reproducible.
    """
    total = 1 << n
    step = 1 << min(block_bits, n)
    bits = np.arange(n, dtype=np.uint64)
    for start in range(0, total, step):
        idx = np.arange(start, min(start + step, total), dtype=np.uint64)
        yield ((idx[:, None] >> bits[None, :]) & 1).astype(np.float64) * 2.0 - 1.0


def streaming_log_sum_exp(chunks: Iterator[np.ndarray]) -> float:
    """log sum exp over a stream of arrays with a running maximum."""
    run_max = -np.inf
    run_sum = 0.0
    for a in chunks:
        if a.size == 0:
            continue
        m = float(a.max())
        if m == -np.inf:
            continue
        if m > run_max:
            run_sum = run_sum * np.exp(run_max - m) + float(np.exp(a - m).sum())
            run_max = m
        else:
            run_sum += float(np.exp(a - run_max).sum())
    if run_max == -np.inf:
        raise ValueError("empty stream")
    return run_max + np.log(run_sum)


def hamiltonian(sigma: np.ndarray, d: Disorder, params: ModelParams) -> float:
    """H(sigma) with the full double sum over i, j (diagonal included)."""
    sigma = _check_spins(sigma)
    if sigma.shape[0] != d.n:
        raise ValueError(f"spin length {sigma.shape[0]} != N = {d.n}")
    return float(params.beta / _SQRT2 * sigma @ d.g @ sigma + params.h * sigma.sum())


def _hamiltonian_blocks(d: Disorder, params: ModelParams) -> Iterator[np.ndarray]:
    for s in spin_blocks(d.n):
        yield params.beta / _SQRT2 * np.einsum("ij,ij->i", s @ d.g, s) + params.h * s.sum(axis=1)


def log_partition_exact(d: Disorder, params: ModelParams) -> float:
    """log Z_N = log [ 2^-N sum_sigma exp H(sigma) ] by exact enumeration."""
    if d.n > MAX_SINGLE_N:
        raise EnumerationLimitError(f"N={d.n} beyond the 2^N enumeration limit {MAX_SINGLE_N}")
    return streaming_log_sum_exp(_hamiltonian_blocks(d, params)) - d.n * _LOG2


def gibbs_magnetizations(d: Disorder, params: ModelParams) -> np.ndarray:
    """<sigma_i> under the Gibbs measure, by two enumeration passes."""
    if d.n > MAX_SINGLE_N:
        raise EnumerationLimitError(f"N={d.n} beyond the 2^N enumeration limit {MAX_SINGLE_N}")
    log_total = streaming_log_sum_exp(_hamiltonian_blocks(d, params))
    acc = np.zeros(d.n)
    for s in spin_blocks(d.n):
        h_vals = params.beta / _SQRT2 * np.einsum("ij,ij->i", s @ d.g, s) + params.h * s.sum(axis=1)
        acc += s.T @ np.exp(h_vals - log_total)
    return acc


def _stage_vectors(state: RecursionState, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stacked phi/xi/eta columns and the scalars <phi^(s), xi^(s)>, s <= k."""
    if k == 0:
        empty = np.zeros((state.n, 0))
        return empty, empty, empty, np.zeros(0)
    phi = np.stack(state.phi[:k], axis=1)
    xi = np.stack(state.xi[:k], axis=1)
    eta = np.stack(state.eta[:k], axis=1)
    c = np.array([inner(state.phi[s], state.xi[s]) for s in range(k)])
    return phi, xi, eta, c


def _single_replica_exponent(
    s: np.ndarray, n: int, params: ModelParams, phi: np.ndarray, xi: np.ndarray, eta: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row exponent of the conditionally annealed enumerand, plus the
    phi-overlap rows needed for pair cross terms."""
    a = params.h * s.sum(axis=1)
    if phi.shape[1] > 0:
        p = s @ phi / n
        u = s @ xi / n
        v = s @ eta / n
        quad = (p * (u + v) - c[None, :] * p * p).sum(axis=1)
        s_sq = (p * p).sum(axis=1)
        a = a + params.beta * n / _SQRT2 * quad + params.beta**2 * n / 4.0 * (1.0 - s_sq) ** 2
    else:
        p = np.zeros((s.shape[0], 0))
        a = a + params.beta**2 * n / 4.0
    return a, p


def _require_stage(state: RecursionState, d: Disorder | None) -> int:
    if d is not None and d.n != state.n:
        raise ValueError(f"disorder size {d.n} != state size {state.n}")
    return state.k - 1


def conditional_first_moment(state: RecursionState, d: Disorder | None = None) -> float:
    """(1/N) log E_k(Z_N), k = state.k - 1, by direct enumeration.

    The enumerand is h sum_i sigma_i + (beta N / sqrt(2)) sum_s <rho^(s)
    sigma, sigma> + (beta^2 N / 4)(1 - sum_r <phi^(r), sigma>^2)^2, with
    the projection quadratic form expanded through <rho^(s) s, s> =
    <phi^(s), s>(<xi^(s), s> + <eta^(s), s>) - <phi^(s), xi^(s)> <phi^(s), s>^2.
    k = 0 (a freshly initialized state) gives the unconditional anneal
    log cosh h + beta^2 / 4.
    """
    k = _require_stage(state, d)
    n = state.n
    if n > MAX_SINGLE_N:
        raise EnumerationLimitError(f"N={n} beyond the 2^N enumeration limit {MAX_SINGLE_N}")
    phi, xi, eta, c = _stage_vectors(state, k)

    def chunks():
        for s in spin_blocks(n):
            a, _ = _single_replica_exponent(s, n, state.params, phi, xi, eta, c)
            yield a

    return (streaming_log_sum_exp(chunks()) - n * _LOG2) / n


def conditional_first_moment_factored(state: RecursionState, d: Disorder | None = None) -> float:
    """(1/N) log E_k(Z_N) through the tilted-measure factorization.

    Algebraically identical to `conditional_first_moment`:

        E_k(Z_N) = exp[sum_i log cosh(h_i^(k+1))]
                   * sum_sigma p^(k)(sigma) exp[N beta F_{N,k}(sigma)],

    evaluated on a genuinely different code path (stage-(k+1) field and
    zeta vectors instead of the raw field term), so the two serve as
    mutual oracles.  Requires k >= 1.
    """
    k = _require_stage(state, d)
    if k < 1:
        raise ValueError("factored form needs conditioning level k >= 1")
    n = state.n
    if n > MAX_SINGLE_N:
        raise EnumerationLimitError(f"N={n} beyond the 2^N enumeration limit {MAX_SINGLE_N}")
    h_field = state.h_fields[-1]
    log_cosh_sum = float((np.logaddexp(h_field, -h_field) - _LOG2).sum())
    phi, xi, eta, c = _stage_vectors(state, k)
    zeta = np.stack(state.zeta[:k], axis=1)
    order, params = state.order, state.params
    gamma = order.gamma[: k - 1]
    gap = order.q if k == 1 else float(order.q_minus_gamma_sq[k - 2])

    def chunks():
        for s in spin_blocks(n):
            p = s @ phi / n
            u = s @ xi / n
            v = s @ eta / n
            z = s @ zeta / n
            quad = (p * (u + v) - c[None, :] * p * p).sum(axis=1)
            f = quad / _SQRT2 - z[:, : k - 1] @ gamma - np.sqrt(gap) * z[:, k - 1]
            f = f + params.beta / 4.0 * (1.0 - (p * p).sum(axis=1)) ** 2
            log_p = s @ h_field - n * _LOG2 - log_cosh_sum
            yield log_p + n * params.beta * f

    return (log_cosh_sum + streaming_log_sum_exp(chunks())) / n


def conditional_second_moment(state: RecursionState, d: Disorder | None = None) -> float:
    """(1/N) log E_k(Z_N^2) by exact pair enumeration, k = state.k - 1.

    The pair exponent carries the two single-replica squares plus twice the
    squared cross term 2 [<s,t> - sum_r <s,phi^(r)><t,phi^(r)>]^2 inside
    the (beta^2 N / 4) bracket; the factor 2 is fixed by the k = 0 closed
    form E exp[X_s + X_t] = exp[(beta^2 N/2)(1 + <s,t>^2)] and by
    consistency at t = s.
    """
    k = _require_stage(state, d)
    n = state.n
    if n > MAX_PAIR_N:
        raise EnumerationLimitError(f"N={n} beyond the 4^N pair-enumeration limit {MAX_PAIR_N}")
    phi, xi, eta, c = _stage_vectors(state, k)
    s_all = np.concatenate(list(spin_blocks(n)), axis=0)
    a_all, p_all = _single_replica_exponent(s_all, n, state.params, phi, xi, eta, c)
    coef = state.params.beta**2 * n / 4.0

    def chunks():
        block = 1 << 10
        for start in range(0, s_all.shape[0], block):
            sb = s_all[start : start + block]
            cross = sb @ s_all.T / n - p_all[start : start + block] @ p_all.T
            yield a_all[start : start + block, None] + a_all[None, :] + coef * 2.0 * cross**2

    return (streaming_log_sum_exp(chunks()) - 2 * n * _LOG2) / n


def f_nk(sigma: np.ndarray, state: RecursionState) -> float:
    """The fluctuation functional F_{N,k} of one configuration, k = state.k - 1.

    F = sum_s <2^{-1/2} rho^(s) sigma, sigma> - sum_{s<k} gamma_s <zeta^(s), sigma>
        - sqrt(q - G2_{k-1}) <zeta^(k), sigma> + (beta/4)(1 - sum_r <phi^(r), sigma>^2)^2.
    """
    sigma = _check_spins(sigma)
    k = state.k - 1
    if k < 1:
        raise ValueError("f_nk needs a state advanced to stage >= 2")
    if sigma.shape[0] != state.n:
        raise ValueError(f"spin length {sigma.shape[0]} != N = {state.n}")
    order, params = state.order, state.params
    total = 0.0
    s_sq = 0.0
    for s in range(k):
        p = inner(state.phi[s], sigma)
        u = inner(state.xi[s], sigma)
        v = inner(state.eta[s], sigma)
        c = inner(state.phi[s], state.xi[s])
        total += (p * (u + v) - c * p * p) / _SQRT2
        s_sq += p * p
    for s in range(k - 1):
        total -= float(order.gamma[s]) * inner(state.zeta[s], sigma)
    gap = order.q if k == 1 else float(order.q_minus_gamma_sq[k - 2])
    total -= np.sqrt(gap) * inner(state.zeta[k - 1], sigma)
    return float(total + params.beta / 4.0 * (1.0 - s_sq) ** 2)


def chi_gap(x: float, h_i: float) -> float:
    """log cosh(h_i + x) - log cosh(h_i) - x tanh(h_i); always <= x^2 / 2."""
    def log_cosh(t: float) -> float:
        return float(np.logaddexp(t, -t) - _LOG2)

    return log_cosh(h_i + x) - log_cosh(h_i) - x * np.tanh(h_i)


def tap_iterate(d: Disorder, order: OrderParams, params: ModelParams, iters: int) -> np.ndarray:
    """Plain fixed-point iteration of the mean-field self-consistency.

    m^(t+1) = tanh(h + beta [gbar m^(t) - beta (1 - q) m^(t-1)]) from
    m^(0) = 0, m^(1) = sqrt(q) 1, with gbar the symmetrized matrix.
    Diagnostic only; the conditioned recursion is the primary construction.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    gbar = symmetrize(d.g)
    onsager = params.beta * (1.0 - order.q)
    m_prev = np.zeros(d.n)
    m_cur = np.sqrt(order.q) * np.ones(d.n)
    for _ in range(iters):
        m_next = np.tanh(params.h + params.beta * (gbar @ m_cur - onsager * m_prev))
        m_prev, m_cur = m_cur, m_next
    return m_cur


@dataclass(frozen=True)
class TiltedMeasure:
    """Product measure over signs with single-site means tanh(h_field).

    `log_norm` stores sum_i log cosh(h_i) - N log 2.  Site i carries
    probability e^{h_i s} / (2 cosh h_i) for s = +-1, so the measure of a
    configuration is exp(sum_i h_i s_i - N log 2 - sum_i log cosh h_i).
    """

    h_field: np.ndarray
    m_mean: np.ndarray
    log_norm: float

    def log_prob(self, sigma: np.ndarray) -> float:
        sigma = _check_spins(sigma)
        n = self.h_field.shape[0]
        log_cosh_sum = self.log_norm + n * _LOG2
        return float(sigma @ self.h_field - n * _LOG2 - log_cosh_sum)


def tilted_measure(state: RecursionState) -> TiltedMeasure:
    """The stage-(k+1) tilted coin-tossing measure of a state at stage k+1."""
    if state.k < 2:
        raise ValueError("tilted measure needs a state advanced to stage >= 2")
    h_field = state.h_fields[-1].copy()
    log_cosh = np.logaddexp(h_field, -h_field) - _LOG2
    return TiltedMeasure(
        h_field=h_field,
        m_mean=np.tanh(h_field),
        log_norm=float(log_cosh.sum()) - state.n * _LOG2,
    )
