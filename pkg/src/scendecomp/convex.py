"""Smooth unconstrained convex minimization with backtracking line search.

Newton steps are used when the objective supplies a Hessian, BFGS steps
otherwise.  Every accepted step satisfies the Armijo condition, or, once the
objective is flat to rounding, strictly reduces the gradient norm.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla


class MinimizerError(RuntimeError):
    """The minimizer could not proceed."""


class NonFiniteError(MinimizerError, FloatingPointError):
    """A value or gradient evaluated to inf or nan at an accepted point."""


class DomainError(ValueError):
    """The objective is undefined at the requested point.

    Raised by objectives; during a line search it is treated as an infinite
    value and the step is shortened.
    """


@dataclass
class SmoothObjective:
    """Objective given by callables.

    Any object with ``value`` and ``gradient`` methods (and optionally
    ``hessian``) can be passed to :func:`minimize`; this class wraps plain
    functions.
    """

    value_fn: Callable
    gradient_fn: Callable
    hessian_fn: Optional[Callable] = None

    def value(self, u):
        return self.value_fn(u)

    def gradient(self, u):
        return self.gradient_fn(u)

    @property
    def hessian(self):
        return self.hessian_fn


class QuadraticObjective:
    """``f(u) = 0.5 u'Hu + g'u + c`` with exact Hessian."""

    def __init__(self, H, g, c=0.0):
        self.H = np.asarray(H, dtype=float)
        self.g = np.asarray(g, dtype=float)
        self.c = float(c)

    def value(self, u):
        return 0.5 * u @ self.H @ u + self.g @ u + self.c

    def gradient(self, u):
        return self.H @ u + self.g

    def hessian(self, u):
        return self.H


@dataclass(frozen=True)
class MinimizerSettings:
    gradient_tolerance: float = 1e-9
    max_steps: int = 500
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    min_step: float = 1e-20

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0 < self.sufficient_decrease <= 0.5:
            raise ValueError("sufficient_decrease must lie in (0, 0.5]")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    gradient_norm: float
    steps: int
    converged: bool
    message: str = ""


def _eval(obj, u):
    try:
        f = float(obj.value(u))
    except DomainError:
        return np.inf
    return f if np.isfinite(f) else np.inf


def _newton_direction(H, g):
    try:
        c = sla.cho_factor(H, check_finite=False)
        p = -sla.cho_solve(c, g, check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        # singular or indefinite: minimum-norm step
        p = -np.linalg.lstsq(H, g, rcond=None)[0]
    if not np.all(np.isfinite(p)) or g @ p >= 0:
        p = -g
    return p


def minimize(obj, u0, settings=None):
    """Minimize a smooth convex objective from ``u0``.

    Parameters
    ----------
    obj : object
        Provides ``value(u)``, ``gradient(u)`` and optionally ``hessian(u)``.
    u0 : array_like
        Starting point.
    settings : MinimizerSettings, optional

    Returns
    -------
    MinimizeResult
        ``converged`` is False when ``max_steps`` ran out or the line search
        stalled before the gradient tolerance was met.

    Raises
    ------
    NonFiniteError
        If the value or gradient is not finite at the start or at an
        accepted iterate.
    """
    s = settings or MinimizerSettings()
    x = np.array(u0, dtype=float)
    hess = getattr(obj, "hessian", None)
    f = _eval(obj, x)
    g = np.asarray(obj.gradient(x), dtype=float) if np.isfinite(f) else None
    if g is None or not np.all(np.isfinite(g)):
        raise NonFiniteError("objective is not finite at the starting point")
    gnorm = float(np.linalg.norm(g))
    Hinv = np.eye(x.size)
    for step in range(s.max_steps):
        if gnorm <= s.gradient_tolerance:
            return MinimizeResult(x, f, gnorm, step, True)
        p = _newton_direction(hess(x), g) if hess is not None else -Hinv @ g
        slope = g @ p
        if slope >= 0:
            p, slope = -g, -gnorm**2
        t = 1.0
        while True:
            x_new = x + t * p
            f_new = _eval(obj, x_new)
            if f_new <= f + s.sufficient_decrease * t * slope:
                g_new = np.asarray(obj.gradient(x_new), dtype=float)
                break
            if np.isfinite(f_new) and abs(f_new - f) <= 64 * np.finfo(float).eps * max(1.0, abs(f)):
                # the value is flat to rounding; fall back to gradient decrease
                g_new = np.asarray(obj.gradient(x_new), dtype=float)
                if np.linalg.norm(g_new) < gnorm:
                    break
            t *= s.shrink
            if t < s.min_step:
                return MinimizeResult(x, f, gnorm, step, False, "line search stalled")
        if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
            raise NonFiniteError("objective became non-finite at an accepted step")
        if hess is None:
            sk, yk = x_new - x, g_new - g
            sy = sk @ yk
            if sy > 1e-300:
                if step == 0:
                    Hinv = np.eye(x.size) * (sy / (yk @ yk))
                rho = 1.0 / sy
                V = np.eye(x.size) - rho * np.outer(sk, yk)
                Hinv = V @ Hinv @ V.T + rho * np.outer(sk, sk)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
    converged = gnorm <= s.gradient_tolerance
    return MinimizeResult(x, f, gnorm, s.max_steps, converged, "" if converged else "max_steps reached")
