"""Progressive hedging over a scenario tree.

Each iteration solves the augmented scenario subproblems

    min_u  J_i(u) + u'w_i + (alpha/2) |u - u_hat_i|^2,

aggregates the solutions bundle by bundle and moves the multipliers by
``alpha * (u - u_hat)``.  Arrays are scenario-major: row ``i`` holds the
time-major stacked control ``(u_0, ..., u_{T-1})`` of scenario ``i``.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from . import kernels
from .tree import aggregate_all

INIT_CHOICES = ("scenario", "zero")


class PhaError(RuntimeError):
    """Base class for engine failures."""


class AdapterError(PhaError):
    """A scenario subproblem solve failed."""

    def __init__(self, scenario, message):
        super().__init__(f"scenario {scenario}: {message}")
        self.scenario = scenario


class DivergenceError(PhaError):
    """The stopping metric blew past the divergence guard."""


class NonFiniteError(PhaError, FloatingPointError):
    """An iterate contains inf or nan."""


@dataclass(frozen=True)
class PhaConfig:
    """PHA tuning.

    Parameters
    ----------
    alpha : float
        Penalty weight, > 0.
    epsilon : float
        Stopping tolerance on the weighted squared-change metric, > 0.
    max_iterations : int
    init : {"scenario", "zero"}
        Start from the per-scenario optima or from the zero control.  The
        zero start is for families whose scenario problems are unbounded.
    divergence_threshold : float
        Abort once the metric exceeds this value.
    """

    alpha: float = 1.0
    epsilon: float = 1e-8
    max_iterations: int = 10000
    init: str = "scenario"
    divergence_threshold: float = 1e12

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError("max_iterations must be a positive integer")
        if self.init not in INIT_CHOICES:
            raise ValueError(f"init must be one of {INIT_CHOICES}")


@dataclass
class ControlEnsemble:
    """Per-scenario stacked controls, shape (S, n*T)."""

    values: np.ndarray
    n: int
    T: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.n * self.T:
            raise ValueError(f"expected (S, {self.n * self.T}) controls, got {self.values.shape}")

    @property
    def n_scenarios(self):
        return self.values.shape[0]

    def stage(self, t):
        """Controls at stage ``t``, shape (S, n)."""
        return self.values[:, t * self.n:(t + 1) * self.n]

    def scenario(self, i):
        """Stage-by-stage controls of scenario ``i``, shape (T, n)."""
        return self.values[i].reshape(self.T, self.n)

    def nonanticipativity_gap(self, tree):
        """Largest deviation of any control from its bundle's first member."""
        gap = 0.0
        for t in range(self.T):
            block = self.stage(t)
            first = block[tree.bundle_representatives(t)]
            gap = max(gap, float(np.abs(block - first[tree.bundle_ids[t]]).max()))
        return gap


class MultiplierEnsemble(ControlEnsemble):
    """Per-scenario multipliers; same layout as :class:`ControlEnsemble`."""


@runtime_checkable
class SubproblemAdapter(Protocol):
    """Scenario subproblem family driven by :func:`pha_solve`.

    ``n`` and ``T`` give the control layout.  Adapters may also define
    ``solve_scenarios()`` and ``solve_augmented_batch(W, U_hat, alpha)``
    returning all scenarios at once; the engine prefers them when present.
    """

    n: int
    T: int

    def solve_scenario(self, i: int) -> np.ndarray: ...

    def solve_augmented(self, i: int, w: np.ndarray, u_hat: np.ndarray, alpha: float) -> np.ndarray: ...


@dataclass
class PhaResult:
    u_hat: ControlEnsemble
    w: MultiplierEnsemble
    u: ControlEnsemble
    iterations: int
    converged: bool
    metrics: np.ndarray
    distances: Optional[np.ndarray] = None
    config: PhaConfig = field(default_factory=PhaConfig)

    def history(self):
        """Rows ``(iteration, stopping_metric, distance or nan)``."""
        dist = self.distances if self.distances is not None else np.full(len(self.metrics), np.nan)
        return [(k + 1, float(m), float(d)) for k, (m, d) in enumerate(zip(self.metrics, dist))]


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def multiplier_update(w, u_new, u_hat_new, alpha):
    """``w + alpha * (u_new - u_hat_new)`` for every scenario."""
    w, u_new = _check_pair(w, u_new)
    _, u_hat_new = _check_pair(u_new, u_hat_new)
    return w + alpha * (u_new - u_hat_new)


def stopping_metric(tree, u_hat_new, u_hat_old, w_new, w_old, alpha):
    """``sum_i rho_i (|du_hat_i|^2 + |dw_i|^2 / alpha^2)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    du = np.subtract(*_check_pair(u_hat_new, u_hat_old))
    dw = np.subtract(*_check_pair(w_new, w_old))
    if du.shape != dw.shape:
        raise ValueError("control and multiplier shapes differ")
    du, dw = du.reshape(tree.n_scenarios, -1), dw.reshape(tree.n_scenarios, -1)
    per = np.einsum("ij,ij->i", du, du) + np.einsum("ij,ij->i", dw, dw) / alpha**2
    return float(tree.probabilities @ per)


def distance_to_reference(tree, u_hat, w, u_ref, w_ref, alpha):
    """``sum_i rho_i (|u_hat_i - u_ref_i|^2 + |w_i - w_ref_i|^2 / alpha^2)``."""
    return stopping_metric(tree, u_hat, u_ref, w, w_ref, alpha)


def _map(fn, items, jobs):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _guarded(i, fn, *args):
    try:
        out = np.asarray(fn(i, *args), dtype=float)
    except AdapterError:
        raise
    except Exception as exc:
        raise AdapterError(i, f"{type(exc).__name__}: {exc}") from exc
    return out


def _initial_controls(tree, adapter, jobs):
    if hasattr(adapter, "solve_scenarios"):
        return np.asarray(adapter.solve_scenarios(), dtype=float)
    rows = _map(lambda i: _guarded(i, adapter.solve_scenario), range(tree.n_scenarios), jobs)
    return np.vstack(rows)


def _augmented(tree, adapter, W, U_hat, alpha, jobs):
    if hasattr(adapter, "solve_augmented_batch"):
        return np.asarray(adapter.solve_augmented_batch(W, U_hat, alpha), dtype=float)
    rows = _map(
        lambda i: _guarded(i, adapter.solve_augmented, W[i], U_hat[i], alpha),
        range(tree.n_scenarios),
        jobs,
    )
    return np.vstack(rows)


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(arr), axis=1))[0])
        raise NonFiniteError(f"{name} not finite (first bad scenario {bad})")


def pha_solve(tree, adapter, config=None, reference=None, warm_start=None, jobs=1):
    """Run progressive hedging to the stopping tolerance.

    Parameters
    ----------
    tree : ScenarioTree
    adapter : SubproblemAdapter
    config : PhaConfig, optional
    reference : tuple of arrays, optional
        ``(u_ref, w_ref)``; when given, the distance to it is logged per
        iteration.
    warm_start : tuple of arrays, optional
        ``(u_hat, w)`` to start from instead of the configured init.
    jobs : int
        Worker threads for per-scenario solves.  Results do not depend on it.

    Returns
    -------
    PhaResult
    """
    cfg = config or PhaConfig()
    n, T, S = adapter.n, adapter.T, tree.n_scenarios
    shape = (S, n * T)
    alpha = float(cfg.alpha)
    rho = np.ascontiguousarray(tree.probabilities)

    if warm_start is not None:
        U_hat = np.array(warm_start[0], dtype=float).reshape(shape)
        W = np.array(warm_start[1], dtype=float).reshape(shape)
        U = U_hat.copy()
    else:
        U = _initial_controls(tree, adapter, jobs) if cfg.init == "scenario" else np.zeros(shape)
        if U.shape != shape:
            raise PhaError(f"adapter returned controls of shape {U.shape}, expected {shape}")
        _check_finite("initial controls", U)
        U_hat = aggregate_all(tree, U, n)
        W = np.zeros(shape)

    if reference is not None:
        u_ref = np.asarray(reference[0], dtype=float).reshape(shape)
        w_ref = np.asarray(reference[1], dtype=float).reshape(shape)

    metrics, distances = [], []
    converged = False
    it = 0
    while it < cfg.max_iterations:
        it += 1
        U = _augmented(tree, adapter, W, U_hat, alpha, jobs)
        if U.shape != shape:
            raise PhaError(f"adapter returned controls of shape {U.shape}, expected {shape}")
        _check_finite("controls", U)
        U_hat_new = aggregate_all(tree, U, n)
        W, metric = kernels.multiplier_step(
            np.ascontiguousarray(W), np.ascontiguousarray(U), U_hat_new, np.ascontiguousarray(U_hat), rho, alpha
        )
        U_hat = U_hat_new
        metrics.append(metric)
        if reference is not None:
            distances.append(distance_to_reference(tree, U_hat, W, u_ref, w_ref, alpha))
        if not np.isfinite(metric):
            raise NonFiniteError(f"stopping metric is {metric} at iteration {it}")
        if metric > cfg.divergence_threshold:
            raise DivergenceError(f"stopping metric {metric:.3e} exceeds guard at iteration {it}")
        if metric <= cfg.epsilon:
            converged = True
            break

    return PhaResult(
        u_hat=ControlEnsemble(U_hat, n, T),
        w=MultiplierEnsemble(W, n, T),
        u=ControlEnsemble(U, n, T),
        iterations=it,
        converged=converged,
        metrics=np.array(metrics),
        distances=np.array(distances) if reference is not None else None,
        config=cfg,
    )
