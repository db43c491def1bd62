"""Layer-wise variance minimization over the probability simplex.

Every solver here minimizes a separable objective of the form

    sum_i alpha_i / pi_i(p_i)      subject to  p >= 0, sum(p) = 1

where ``alpha_i`` is the squared activation of unit ``i`` and ``pi_i`` is the
probability that unit ``i`` is picked at least once in ``C`` categorical
draws.  ``solve_exact`` handles the exponential surrogate
``pi_i = 1 - exp(-C p_i)`` through a scalar root search, while
``solve_linear`` and ``solve_log`` are the small-C and large-C closed forms.
``oracle_projected_gradient`` is a slow, independent reference used by the
test suite.

Entries with ``alpha_i == 0`` never enter the optimization and always
receive probability exactly 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLayerError, NonConvergenceError, SolverError

__all__ = [
    "SolverInput",
    "SolverState",
    "exact_objective",
    "surrogate_objective",
    "root_equation",
    "probabilities_from_rho",
    "solve_exact",
    "solve_linear",
    "solve_log",
    "oracle_projected_gradient",
    "project_simplex",
    "bernoulli_params",
    "kkt_residual",
]

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class SolverInput:
    """Coefficients ``alpha`` and draw count ``C`` for one sampling unit.

    ``alpha`` is usually ``x**2`` for the activation ``x`` feeding the unit.
    ``support`` holds the indices with strictly positive ``alpha``.
    """

    alpha: np.ndarray
    C: float
    support: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        if not np.all(np.isfinite(alpha)) or np.any(alpha < 0):
            raise ValueError("alpha must be finite and nonnegative")
        C = float(self.C)
        if not (C > 0 and math.isfinite(C)):
            raise ValueError(f"draw count C must be positive, got {self.C!r}")
        support = np.flatnonzero(alpha > 0)
        if support.size == 0:
            raise DegenerateLayerError("all alpha entries are zero")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "support", support)

    @classmethod
    def from_activation(cls, x, C) -> "SolverInput":
        return cls(np.square(np.asarray(x, dtype=float)), C)

    @property
    def h(self) -> int:
        """Number of units on the support."""
        return int(self.support.size)

    def _embed(self, p_support: np.ndarray) -> np.ndarray:
        p = np.zeros_like(self.alpha)
        p[self.support] = p_support
        return p


@dataclass(frozen=True)
class SolverState:
    """Diagnostics from ``solve_exact``.

    ``rho`` is the root of the scalar equation (the multiplier of the
    stationarity condition after dividing by ``C``); ``multiplier`` is the
    Lagrange multiplier of the original problem, ``C * rho``.
    """

    rho: float
    multiplier: float
    residual: float
    iterations: int
    newton_steps: int = 0


def _denominators_exact(p, C):
    # 1 - (1 - p)^C, accurate for small p
    with np.errstate(divide="ignore"):
        return -np.expm1(C * np.log1p(-p))


def exact_objective(p, inp: SolverInput) -> float:
    """Evaluate ``sum alpha_i / (1 - (1 - p_i)^C)`` over the support.

    Returns ``inf`` when some supported coordinate has ``p_i == 0``.
    """
    p = np.asarray(p, dtype=float)
    ps = p[inp.support]
    if np.any(ps <= 0):
        return math.inf
    return float(np.sum(inp.alpha[inp.support] / _denominators_exact(ps, inp.C)))


def surrogate_objective(p, inp: SolverInput) -> float:
    """Evaluate the exponential upper bound ``sum alpha_i / (1 - exp(-C p_i))``."""
    p = np.asarray(p, dtype=float)
    ps = p[inp.support]
    if np.any(ps <= 0):
        return math.inf
    return float(np.sum(inp.alpha[inp.support] / -np.expm1(-inp.C * ps)))


def probabilities_from_rho(rho: float, alpha: np.ndarray, C: float) -> np.ndarray:
    """Stationary point of the surrogate for a given scaled multiplier.

    Solving ``rho*y**2 - (2*rho + a)*y + rho = 0`` for the root ``y < 1`` and
    mapping back with ``p = -ln(y)/C`` gives ``p = (2/C) asinh(sqrt(a/rho)/2)``.
    The asinh form avoids the cancellation in ``2*rho + a - sqrt(...)`` when
    ``a << rho``.
    """
    return (2.0 / C) * np.arcsinh(0.5 * np.sqrt(alpha / rho))


def root_equation(rho: float, alpha: np.ndarray, C: float) -> float:
    """Left-hand side of the scalar root equation for ``rho``.

    Algebraically equal to
    ``sum ln(2rho + a - sqrt((2rho + a)^2 - 4rho^2)) - h ln(2rho) + C``
    and evaluated as ``C * (1 - sum p_i(rho))``. Strictly increasing in rho,
    tending to ``-inf`` as rho -> 0 and to ``C`` as rho -> inf.
    """
    return float(C * (1.0 - np.sum(probabilities_from_rho(rho, alpha, C))))


def _root_equation_literal(rho, alpha, C):
    # Direct transcription; loses precision once alpha << rho.
    two_rho = 2.0 * rho
    num = two_rho + alpha - np.sqrt((two_rho + alpha) ** 2 - 4.0 * rho**2)
    return float(np.sum(np.log(num)) - alpha.size * math.log(two_rho) + C)


def solve_exact(
    inp: SolverInput,
    tol: float = 1e-12,
    *,
    newton: bool = False,
    max_expand: int = 2100,
    max_iter: int = 500,
) -> tuple[np.ndarray, SolverState]:
    """Minimize the exponential surrogate exactly by bisection on ``rho``.

    The bracket starts at ``rho0 = mean(alpha)`` over the support and is
    doubled or halved until the root equation changes sign, then bisected
    until its relative width drops below ``tol``. With ``newton=True`` a few
    safeguarded Newton steps polish the bisection midpoint.

    Returns:
        ``(p, state)`` where ``p`` is the full-length probability vector.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol!r}")
    C = inp.C
    alpha = inp.alpha[inp.support]
    if alpha.size == 1:
        p = inp._embed(np.ones(1))
        return p, SolverState(math.inf, math.inf, 0.0, 0)

    def g(rho):
        return root_equation(rho, alpha, C)

    rho0 = float(np.sum(alpha) / alpha.size)
    g0 = g(rho0)
    lo = hi = rho0
    expansions = 0
    if g0 < 0:
        g_hi = g0
        while g_hi < 0:
            lo, hi = hi, hi * 2.0
            g_hi = g(hi)
            expansions += 1
            if expansions > max_expand or not math.isfinite(hi):
                raise SolverError("no sign change found while expanding rho upward")
    elif g0 > 0:
        g_lo = g0
        while g_lo > 0:
            hi, lo = lo, lo * 0.5
            g_lo = g(lo)
            expansions += 1
            if expansions > max_expand or lo == 0.0:
                raise SolverError("no sign change found while shrinking rho")

    iterations = expansions
    if lo == hi:
        rho = lo
    else:
        while (hi - lo) > tol * hi:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if g(mid) < 0:
                lo = mid
            else:
                hi = mid
            iterations += 1
            if iterations > max_iter:
                raise NonConvergenceError("bisection exceeded its iteration cap")
        rho = 0.5 * (lo + hi)

    newton_steps = 0
    if newton:
        rho, newton_steps = _newton_polish(rho, alpha, C, lo, hi)

    p = inp._embed(probabilities_from_rho(rho, alpha, C))
    return p, SolverState(rho, C * rho, g(rho), iterations, newton_steps)


def _newton_polish(rho, alpha, C, lo, hi, steps=8):
    """Newton iterations on ``sum p(rho) - 1`` kept inside ``[lo, hi]``."""
    done = 0
    for _ in range(steps):
        s = 0.5 * np.sqrt(alpha / rho)
        phi = np.sum((2.0 / C) * np.arcsinh(s)) - 1.0
        dphi = -np.sum(s / (C * rho * np.sqrt(1.0 + s * s)))
        if phi == 0.0 or dphi == 0.0:
            break
        nxt = rho - phi / dphi
        if not (lo <= nxt <= hi):
            break
        done += 1
        if abs(nxt - rho) <= 4 * np.finfo(float).eps * rho:
            rho = nxt
            break
        rho = nxt
    return rho, done


def kkt_residual(p, inp: SolverInput, multiplier: float) -> float:
    """Max relative violation of ``-C a e^{-Cp}/(1-e^{-Cp})^2 + multiplier = 0``."""
    ps = np.asarray(p, dtype=float)[inp.support]
    a = inp.alpha[inp.support]
    C = inp.C
    denom = np.expm1(-C * ps)
    grad = -C * a * np.exp(-C * ps) / (denom * denom)
    return float(np.max(np.abs(grad + multiplier)) / multiplier)


def solve_linear(inp: SolverInput) -> np.ndarray:
    """Small-C closed form: probabilities proportional to ``|x_i|``."""
    root = np.sqrt(inp.alpha[inp.support])
    return inp._embed(root / np.sum(root))


def solve_log(inp: SolverInput) -> np.ndarray:
    """Large-C closed form ``p_i = [ln(C alpha_i)/C + beta]_+``.

    ``beta`` starts at the value that makes the unclipped vector sum to one,
    is corrected once over the surviving (positive) coordinates, and the
    clipped result is renormalized.
    """
    C = inp.C
    a = inp.alpha[inp.support]
    raw = np.log(np.maximum(C * a, LOG_FLOOR)) / C
    beta = (1.0 - np.sum(raw)) / raw.size
    p = np.maximum(raw + beta, 0.0)
    active = p > 0
    beta = (1.0 - np.sum(raw[active])) / np.count_nonzero(active)
    p = np.maximum(raw + beta, 0.0)
    total = np.sum(p)
    if total <= 0:
        # beta correction overshot every coordinate; keep the largest terms
        p = (raw == raw.max()).astype(float)
        total = np.sum(p)
    return inp._embed(p / total)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    r = np.count_nonzero(u - css / k > 0)
    theta = css[r - 1] / r
    return np.maximum(v - theta, 0.0)


def _objective_and_grad(which, a, C):
    # Both objectives are written minus the constant sum(a), using
    # 1/(1 - q) = 1 + q/(1 - q). Same argmin, but the shifted value keeps
    # full relative precision when every pick probability is close to 1.
    if which == "exp-surrogate":

        def f(p):
            if np.any(p <= 0):
                return math.inf
            return float(np.sum(a / np.expm1(C * p)))

        def grad(p):
            d = np.expm1(-C * p)
            return -C * a * np.exp(-C * p) / (d * d)

    elif which == "exact-objective":

        def f(p):
            if np.any(p <= 0):
                return math.inf
            with np.errstate(divide="ignore"):
                return float(np.sum(a / np.expm1(-C * np.log1p(-p))))

        def grad(p):
            d = _denominators_exact(p, C)
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(p < 1, np.exp((C - 1) * np.log1p(-p)), 0.0 if C > 1 else 1.0)
            return -C * a * q / (d * d)

    else:
        raise ValueError(f"unknown objective {which!r}")
    return f, grad


def oracle_projected_gradient(
    inp: SolverInput,
    which: str = "exp-surrogate",
    tol: float = 1e-7,
    *,
    max_iter: int = 200_000,
    stall_window: int = 200,
    accelerate: bool = True,
) -> np.ndarray:
    """Reference minimizer by projected gradient with backtracking.

    Each step projects ``y - t*grad(y)`` onto the simplex and halves ``t``
    until the quadratic upper-bound condition holds; ``t`` doubles after
    every accepted step. With ``accelerate`` the base point ``y`` carries
    Nesterov momentum that is reset whenever the objective goes up.

    Both objectives have a pole at ``p_i = 0`` so the minimizer is
    interior, where optimality means equal partial derivatives. Iteration
    stops once their relative spread falls below ``tol``, or once the
    objective has stopped improving at floating-point resolution over
    ``stall_window`` iterations.
    """
    a = inp.alpha[inp.support]
    if a.size == 1:
        return inp._embed(np.ones(1))
    f, grad = _objective_and_grad(which, a, inp.C)
    p = np.full(a.size, 1.0 / a.size)
    fp = f(p)
    g = grad(p)
    t = 1.0 / max(float(np.max(np.abs(g))), 1e-300)
    y, fy, gy = p, fp, g
    momentum = 1.0
    f_window = fp
    for it in range(1, max_iter + 1):
        if (g.max() - g.min()) <= tol * abs(g.mean()):
            return inp._embed(p)
        if it % stall_window == 0:
            if f_window - fp <= 1e-14 * abs(fp):
                return inp._embed(p)
            f_window = fp
        while True:
            q = project_simplex(y - t * gy)
            fq = f(q)
            d = q - y
            if fq <= fy + gy @ d + (d @ d) / (2.0 * t):
                break
            t *= 0.5
            if t < 1e-300:
                raise NonConvergenceError("line search step underflowed")
        t *= 2.0
        if accelerate and fq <= fp:
            nxt = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
            y = q + ((momentum - 1.0) / nxt) * (q - p)
            momentum = nxt
            p, fp = q, fq
            g = grad(p)
            if np.all(y > 0) and abs(y.sum() - 1.0) < 1e-12:
                fy, gy = f(y), grad(y)
                continue
        elif fq <= fp:
            p, fp = q, fq
            g = grad(p)
        momentum = 1.0
        y, fy, gy = p, fp, g
    raise NonConvergenceError(f"projected gradient did not converge in {max_iter} iterations")


def bernoulli_params(p, C: float) -> np.ndarray:
    """Pick-at-least-once probabilities ``1 - (1 - p)^C`` for ``C`` draws."""
    p = np.asarray(p, dtype=float)
    if not C > 0:
        raise ValueError(f"C must be positive, got {C!r}")
    pi = _denominators_exact(np.clip(p, 0.0, 1.0), float(C))
    pi[p <= 0] = 0.0
    pi[p >= 1] = 1.0
    return pi
