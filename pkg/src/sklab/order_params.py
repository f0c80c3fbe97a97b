"""Scalar (N-independent) order parameters of the high-temperature SK model.

Everything here is a plain Gaussian expectation evaluated by Gauss-Hermite
quadrature: the overlap fixed point

    q = E tanh^2(h + beta sqrt(q) Z),

the stability value  beta^2 E cosh^-4(h + beta sqrt(q) Z)  (the model is
replica-symmetric-stable when this is <= 1), the replica-symmetric free
energy functional, and the coupled sequences (gamma_k, rho_k) driving the
cavity recursion:

    gamma_1 = E Th(sqrt(q) Z),   rho_1 = sqrt(q) gamma_1,
    rho_k   = psi(rho_{k-1}),    gamma_k = (rho_k - G2_{k-1}) / sqrt(q - G2_{k-1}),

with G2_k = sum_{j<=k} gamma_j^2, Th(x) = tanh(h + beta x), and

    psi(t) = E Th(sqrt(t) Z + sqrt(q-t) Z') Th(sqrt(t) Z + sqrt(q-t) Z'').

rho_k increases to q geometrically with ratio equal to the stability value,
so q - rho_k underflows the spacing of float64 near q after ~12 stages at
moderate beta.  The builder therefore tracks the gaps e_k = q - rho_k and
d_k = q - G2_k as primary variables (switching to a first-order update
e_k = e_{k-1} psi'(q - e_{k-1}/2) once e < 1e-8, where the neglected
curvature term is O(e) relative), which keeps every strict inequality of
the construction resolvable in double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss

__all__ = [
    "ModelParams",
    "OrderParams",
    "ConvergenceError",
    "SequenceError",
    "gauss_expect",
    "solve_q",
    "psi",
    "psi_derivative",
    "build_sequences",
    "at_value",
    "rs_functional",
    "rs_free_energy",
    "toy_exponent",
]

# Switch point between direct quadrature of rho_k and the gap propagation.
_GAP_SWITCH = 1e-8


class ConvergenceError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""


class SequenceError(RuntimeError):
    """The gamma/rho recursion left its admissible domain."""


@dataclass(frozen=True)
class ModelParams:
    """Thermodynamic knobs (beta, h) plus numerical tolerances.

    beta = 0 is admitted for the degenerate calibration points even though
    the model proper assumes beta > 0; h = 0 is rejected only where
    uniqueness of q requires it (see `solve_q`).
    """

    beta: float
    h: float
    quad_nodes: int = 61
    tol: float = 1e-12

    def __post_init__(self) -> None:
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")
        if not math.isfinite(self.h):
            raise ValueError(f"h must be finite, got {self.h}")
        if self.quad_nodes < 21:
            raise ValueError(f"quad_nodes must be >= 21, got {self.quad_nodes}")
        if not (self.tol > 0.0):
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass(frozen=True)
class OrderParams:
    """Scalar limits of the construction at fixed (beta, h).

    `gamma`, `rho`, `gamma_sq_partial` have length K.  `q_minus_rho` and
    `q_minus_gamma_sq` hold the gaps e_k = q - rho_k and d_k = q - G2_k in
    full relative precision; `rho[k]` and `gamma_sq_partial[k]` are their
    rounded complements.  Consumers needing sqrt(q - G2_k) should use the
    gap arrays directly to avoid re-subtracting nearly equal floats.
    """

    q: float
    gamma: np.ndarray
    rho: np.ndarray
    gamma_sq_partial: np.ndarray
    at_value: float
    q_minus_rho: np.ndarray
    q_minus_gamma_sq: np.ndarray

    def __post_init__(self) -> None:
        for name in ("gamma", "rho", "gamma_sq_partial", "q_minus_rho", "q_minus_gamma_sq"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def __len__(self) -> int:
        return len(self.gamma)


@lru_cache(maxsize=32)
def _gh(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes z and weights w with E f(Z) ~= sum_i w_i f(z_i), Z ~ N(0,1)."""
    x, w = hermgauss(nodes)
    return np.sqrt(2.0) * x, w / np.sqrt(np.pi)


def gauss_expect(f: Callable[[np.ndarray], np.ndarray], nodes: int = 61) -> float:
    """Gauss-Hermite approximation of E f(Z) for standard Gaussian Z.

    `f` may be vectorized over a node array or accept scalars.
    """
    if nodes < 1:
        raise ValueError(f"nodes must be >= 1, got {nodes}")
    z, w = _gh(nodes)
    try:
        vals = np.asarray(f(z), dtype=float)
        if vals.shape != z.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.array([float(f(zi)) for zi in z])
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise ValueError(f"non-finite integrand value {vals[bad]} at node z={z[bad]}")
    return float(w @ vals)


def _tanh_sq_mean(q: float, params: ModelParams) -> float:
    z, w = _gh(params.quad_nodes)
    return float(w @ np.tanh(params.h + params.beta * np.sqrt(q) * z) ** 2)


def solve_q(params: ModelParams) -> float:
    """Solve q = E tanh^2(h + beta sqrt(q) Z) for h != 0.

    Damped fixed-point iteration (weight 1/2) from tanh^2(h), polished to
    the machine fixed point; a bisection on the residual is the fallback.
    The h = 0 branch structure (two solutions for beta > 1) is out of
    scope and rejected.
    """
    if params.h == 0.0:
        raise ValueError("solve_q requires h != 0 (uniqueness regime)")
    if params.beta == 0.0:
        return float(np.tanh(params.h) ** 2)

    q = float(np.tanh(params.h) ** 2)
    best_q, best_res = q, math.inf
    for _ in range(500):
        t = _tanh_sq_mean(q, params)
        res = abs(q - t)
        if res < best_res:
            best_q, best_res = q, res
        q_next = 0.5 * q + 0.5 * t
        if q_next == q:
            break
        q = q_next
    if best_res < params.tol:
        return best_q

    lo, hi = 1e-300, 1.0
    f_lo = lo - _tanh_sq_mean(lo, params)
    f_hi = hi - _tanh_sq_mean(hi, params)
    if not (f_lo < 0.0 < f_hi):
        raise ConvergenceError(
            f"q iteration stalled at q={best_q} (residual {best_res:.3e}) and "
            f"the residual does not bracket a root on (0, 1)"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid - _tanh_sq_mean(mid, params) > 0.0:
            hi = mid
        else:
            lo = mid
    q = 0.5 * (lo + hi)
    res = abs(q - _tanh_sq_mean(q, params))
    if res >= params.tol:
        raise ConvergenceError(f"bisection residual {res:.3e} exceeds tol at q={q}")
    return q


def _psi_grid(t: float, q: float, params: ModelParams) -> np.ndarray:
    z, w = _gh(params.quad_nodes)
    st = np.sqrt(max(t, 0.0))
    sq = np.sqrt(max(q - t, 0.0))
    args = params.h + params.beta * (st * z[:, None] + sq * z[None, :])
    return args


def psi(t: float, order: "OrderParams | float", params: ModelParams) -> float:
    """The sequence map psi(t) = E Th(z_t) Th(z'_t), 0 <= t <= q.

    Th(x) = tanh(h + beta x) and z_t, z'_t are jointly Gaussian with
    variance q and covariance t.  Since the two arguments share only the
    sqrt(t) Z component, psi factorizes into nested one-dimensional
    quadratures: psi(t) = E_Z [ (E_{Z'} Th(sqrt(t) Z + sqrt(q-t) Z'))^2 ].
    """
    q = order.q if isinstance(order, OrderParams) else float(order)
    if not (-1e-12 <= t <= q + 1e-12):
        raise ValueError(f"t={t} outside [0, q={q}]")
    t = min(max(t, 0.0), q)
    _, w = _gh(params.quad_nodes)
    inner_mean = np.tanh(_psi_grid(t, q, params)) @ w
    return float(w @ inner_mean**2)


def psi_derivative(t: float, order: "OrderParams | float", params: ModelParams) -> float:
    """psi'(t) = E Th'(z_t) Th'(z'_t) (differentiation through the covariance).

    At t = q this is exactly the stability value beta^2 E cosh^-4, which is
    why rho_k -> q at geometric rate equal to that value.
    """
    q = order.q if isinstance(order, OrderParams) else float(order)
    if not (-1e-12 <= t <= q + 1e-12):
        raise ValueError(f"t={t} outside [0, q={q}]")
    t = min(max(t, 0.0), q)
    _, w = _gh(params.quad_nodes)
    inner_mean = (params.beta / np.cosh(_psi_grid(t, q, params)) ** 2) @ w
    return float(w @ inner_mean**2)


def at_value(params: ModelParams, q: float) -> float:
    """Stability value beta^2 E cosh^-4(h + beta sqrt(q) Z); stable iff <= 1."""
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q={q} outside [0, 1]")
    if params.beta == 0.0:
        return 0.0
    z, w = _gh(params.quad_nodes)
    return params.beta**2 * float(w @ (1.0 / np.cosh(params.h + params.beta * np.sqrt(q) * z) ** 4))


def build_sequences(params: ModelParams, K: int) -> OrderParams:
    """Build gamma_1..K, rho_1..K and the partial sums G2_k.

    Requires h != 0.  Raises `SequenceError` as soon as q - G2_{k-1} is not
    strictly positive at working precision (at beta = 0 this happens at
    k = 2: the sequence degenerates to rho_k = q after one step).
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    q = solve_q(params)
    at = at_value(params, q)
    z, w = _gh(params.quad_nodes)
    gamma1 = float(w @ np.tanh(params.h + params.beta * np.sqrt(q) * z))

    gammas = [gamma1]
    es = [q - np.sqrt(q) * gamma1]  # e_1 = q - rho_1
    ds = [q - gamma1 * gamma1]      # d_1 = q - G2_1
    for k in range(2, K + 1):
        e_prev, d_prev = es[-1], ds[-1]
        if e_prev > _GAP_SWITCH:
            e_k = q - psi(q - e_prev, q, params)
        elif e_prev > 0.0:
            e_k = e_prev * psi_derivative(q - 0.5 * e_prev, q, params)
        else:
            e_k = 0.0
        if d_prev <= max(e_k, 0.0) or d_prev <= 0.0:
            raise SequenceError(
                f"q - G2_{k-1} = {d_prev:.3e} not strictly above q - rho_{k} = {e_k:.3e}; "
                f"the sandwich G2_{k-1} < rho_k < q fails at working precision "
                f"(beta = 0 degeneracy or accumulated roundoff)"
            )
        gammas.append((d_prev - e_k) / np.sqrt(d_prev))
        # d_k = d_{k-1} - gamma_k^2, expanded to avoid cancellation
        ds.append(e_k * (2.0 * d_prev - e_k) / d_prev)
        es.append(e_k)

    es_arr = np.array(es)
    ds_arr = np.array(ds)
    return OrderParams(
        q=q,
        gamma=np.array(gammas),
        rho=q - es_arr,
        gamma_sq_partial=q - ds_arr,
        at_value=at,
        q_minus_rho=es_arr,
        q_minus_gamma_sq=ds_arr,
    )


def rs_functional(params: ModelParams, q: float) -> float:
    """The variational bracket E log cosh(h + beta sqrt(q) Z) + beta^2 (1-q)^2 / 4."""
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q={q} outside [0, 1]")
    z, w = _gh(params.quad_nodes)
    x = params.h + params.beta * np.sqrt(q) * z
    log_cosh = np.logaddexp(x, -x) - np.log(2.0)
    return float(w @ log_cosh) + params.beta**2 * (1.0 - q) ** 2 / 4.0


def rs_free_energy(params: ModelParams) -> float:
    """inf over q of the replica-symmetric bracket.

    For h != 0 the infimum sits at the unique fixed point from `solve_q`;
    for h = 0 the minimizer is located by a grid scan refined with golden
    section (this covers the beta > 1 positive branch as well).  A
    1001-point scan guards the result: any grid value lower by more than
    1e-9 signals a failed solve and raises `ConvergenceError`.
    """
    grid = np.linspace(0.0, 1.0, 1001)
    grid_vals = np.array([rs_functional(params, g) for g in grid])
    i_min = int(np.argmin(grid_vals))

    if params.h != 0.0:
        val = rs_functional(params, solve_q(params))
    else:
        lo = grid[max(i_min - 1, 0)]
        hi = grid[min(i_min + 1, len(grid) - 1)]
        q_ref, v_ref = _golden_min(lambda t: rs_functional(params, t), lo, hi)
        val = min(v_ref, rs_functional(params, 0.0))

    if grid_vals[i_min] < val - 1e-9:
        raise ConvergenceError(
            f"grid scan found {grid_vals[i_min]} at q={grid[i_min]}, below "
            f"the stationary value {val}; q solve is inconsistent"
        )
    return val


_INV_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f: Callable[[float], float], a: float, b: float, tol: float = 1e-12) -> tuple[float, float]:
    x, v = _golden_max(lambda t: -f(t), a, b, tol)
    return x, -v


def _golden_max(f: Callable[[float], float], a: float, b: float, tol: float = 1e-12) -> tuple[float, float]:
    """Golden-section maximum of a unimodal f on [a, b]."""
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(300):
        if b - a <= tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = f(d)
    else:
        raise ConvergenceError(f"golden section did not shrink below {tol} on [{a}, {b}]")
    x = 0.5 * (a + b)
    return x, f(x)


def toy_exponent(beta: float, m: float, grid_points: int = 801) -> float:
    """sup_x [ beta^2 x^2 / 2 - J(x) ] for the centered-product toy model.

    Here J is the Cramer rate function of eta = (s - m)(s' - m) with s, s'
    independent signs of mean m: eta takes the three values (1-m)^2,
    -(1-m^2), (1+m)^2 with the product-Bernoulli weights.  J(x) is computed
    as a Legendre transform by golden section over the tilt in [-50, 50];
    the outer sup runs over the convex hull of the support, located by a
    grid scan and refined by golden section.  The value is always >= 0
    (x = 0 gives J = 0) and equals 0 for beta small.
    """
    if not (-1.0 < m < 1.0):
        raise ValueError(f"m={m} outside (-1, 1)")
    if beta < 0.0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    p_plus, p_minus = (1.0 + m) / 2.0, (1.0 - m) / 2.0
    vals = np.array([(1.0 - m) ** 2, -(1.0 - m) * (1.0 + m), (1.0 + m) ** 2])
    log_wts = np.log(np.array([p_plus**2, 2.0 * p_plus * p_minus, p_minus**2]))

    def cgf(lam: float) -> float:
        a = lam * vals + log_wts
        mx = a.max()
        return float(mx + np.log(np.exp(a - mx).sum()))

    def rate(x: float) -> float:
        _, v = _golden_max(lambda lam: lam * x - cgf(lam), -50.0, 50.0, tol=1e-11)
        return v

    def objective(x: float) -> float:
        return 0.5 * beta * beta * x * x - rate(x)

    lo, hi = float(vals.min()), float(vals.max())
    xs = np.linspace(lo, hi, grid_points)
    ys = np.array([objective(x) for x in xs])
    i = int(np.argmax(ys))
    _, v = _golden_max(objective, xs[max(i - 1, 0)], xs[min(i + 1, grid_points - 1)], tol=1e-11)
    out = max(v, objective(0.0))
    if not math.isfinite(out):
        raise ConvergenceError(f"toy exponent optimization returned {out} at beta={beta}, m={m}")
    return out
