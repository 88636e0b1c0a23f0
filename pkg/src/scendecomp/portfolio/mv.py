"""Mean-variance with wealth smoothing via an auxiliary quadratic problem.

The target is ``max E[x_T] - w Var(x_T) - gamma E[sum_t (x_t - xbar)^2]``
over ``t = 1..T``.  For fixed ``lambda`` the auxiliary problem
``max E[-x'Wx + lambda x_T]`` is an expectation of per-scenario quadratics
and is solved by PHA; ``lambda`` is then tuned by a grid search with a
parabola refinement.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .. import kernels
from ..convex import MinimizerSettings, QuadraticObjective, minimize
from ..pha import AdapterError, PhaConfig, pha_solve
from .market import MarketError, excess_returns, wealth_maps

EIG_FLOOR = -1e-10


@dataclass(frozen=True)
class MvsSpec:
    w: float
    gamma: float = 0.0

    def __post_init__(self):
        if not self.w >= 0 or not self.gamma >= 0:
            raise MarketError("w and gamma must be nonnegative")


def mv_K(dist):
    """``E[P P']^{-1} E[P]`` for a distribution of excess returns."""
    M2 = dist.second_moment()
    mean = dist.mean()
    if np.linalg.cond(M2) > 1e12:
        raise np.linalg.LinAlgError("second moment of the excess return is singular")
    return np.linalg.solve(M2, mean)


@dataclass
class MvPolicy:
    """Affine feedback ``u_t = -K_t r_t x_t + c_t K_t``."""

    K: list
    offsets: np.ndarray
    r: np.ndarray

    def control(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.multiply.outer(-self.r[t] * x + self.offsets[t], self.K[t])

    def evaluate_on_tree(self, market, tree):
        """Stacked controls (S, n*T) and wealth (S, T+1) of every scenario."""
        P = tree.noise()
        x = np.full(tree.n_scenarios, market.x0)
        X, U = [x], []
        for t in range(market.T):
            u = self.control(t, x)
            x = market.r[t] * x + np.einsum("sk,sk->s", P[:, t], u)
            U.append(u)
            X.append(x)
        return np.hstack(U), np.stack(X, axis=1)


def mv_analytical_policy(market, w):
    """Optimal feedback policy of the classical multi-period MV problem."""
    if not w > 0:
        raise MarketError("the analytical MV policy needs w > 0")
    dists = excess_returns(market)
    K = [mv_K(d) for d in dists]
    denom = np.prod([1.0 - d.mean() @ k for d, k in zip(dists, K)])
    if abs(denom) < 1e-300:
        raise ZeroDivisionError("prod_s (1 - E[P_s]'K_s) vanishes")
    level = market.x0 * market.growth(0, market.T) + 1.0 / (2.0 * w * denom)
    offsets = np.array([level / market.growth(t + 1, market.T) for t in range(market.T)])
    return MvPolicy(K, offsets, market.r.copy())


def smoothing_weights(T, spec):
    """``W`` with ``x'Wx = w x_T^2 + gamma sum_{t=1..T} (x_t - xbar)^2``."""
    g = spec.gamma
    W = np.full((T, T), -g / T)
    W[np.diag_indices(T)] = g - g / T
    W[-1, -1] += spec.w
    return W


@dataclass(frozen=True)
class AuxiliaryQp:
    """Data of ``max E[-x'Wx + lambda x'delta]`` with ``x = x0 r + P^i u``.

    ``P`` has shape (S, T, n*T); ``r`` holds ``prod_{tau<t} r_tau`` for t = 1..T.
    """

    W: np.ndarray
    lam: float
    P: np.ndarray
    r: np.ndarray
    x0: float
    delta: np.ndarray = field(init=False)

    def __post_init__(self):
        d = np.zeros(self.W.shape[0])
        d[-1] = 1.0
        object.__setattr__(self, "delta", d)

    def wealth(self, U):
        """x_1..x_T of every scenario, shape (S, T)."""
        return self.x0 * self.r + np.einsum("stv,sv->st", self.P, np.asarray(U, dtype=float))

    def scenario_objective(self, i):
        """Minimization form ``x'Wx - lambda x_T`` as a quadratic in ``u``."""
        Pi = self.P[i]
        H = 2.0 * Pi.T @ self.W @ Pi
        g = 2.0 * self.x0 * Pi.T @ self.W @ self.r - self.lam * Pi.T @ self.delta
        c = self.x0**2 * self.r @ self.W @ self.r - self.lam * self.x0 * self.r[-1]
        return QuadraticObjective(H, g, c)


def build_auxiliary(market, spec, lam, tree=None):
    tree = tree if tree is not None else market.tree()
    W = smoothing_weights(market.T, spec)
    if np.linalg.eigvalsh(W).min() < EIG_FLOOR:
        raise MarketError("smoothing weight matrix is not positive semidefinite")
    G, _ = wealth_maps(market, tree)
    r = np.cumprod(market.r)
    return AuxiliaryQp(W, float(lam), G, r, market.x0)


def aux_augmented_optimum(aux, i, w_mult, u_hat, alpha):
    """``-[2P'WP + alpha I]^{-1} [2 x0 P'Wr - lambda P'delta + w - alpha u_hat]``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    Pi = aux.P[i]
    H = 2.0 * Pi.T @ aux.W @ Pi + alpha * np.eye(Pi.shape[1])
    rhs = 2.0 * aux.x0 * Pi.T @ aux.W @ aux.r - aux.lam * Pi.T @ aux.delta + w_mult - alpha * u_hat
    return -sla.solve(H, rhs, assume_a="pos")


class AuxiliaryAdapter:
    """Closed-form PHA subproblems of an :class:`AuxiliaryQp`, batched."""

    def __init__(self, aux, n, settings=None):
        self.aux = aux
        self.n = n
        self.T = aux.W.shape[0]
        self.settings = settings or MinimizerSettings()
        P, W = aux.P, aux.W
        self._H = 2.0 * np.einsum("stv,tk,skw->svw", P, W, P)
        PtW = np.einsum("stv,tk->svk", P, W)
        self._lin = 2.0 * aux.x0 * PtW @ aux.r
        self._pd = P[:, -1, :]
        self._alpha = None

    def set_lambda(self, lam):
        self.aux = AuxiliaryQp(self.aux.W, float(lam), self.aux.P, self.aux.r, self.aux.x0)

    def _g(self):
        return self._lin - self.aux.lam * self._pd

    def solve_scenario(self, i):
        # 2P'WP is singular when nT > T; the Newton step from zero is the
        # minimum-norm minimizer
        obj = QuadraticObjective(self._H[i], self._g()[i])
        res = minimize(obj, np.zeros(self._H.shape[1]), self.settings)
        if not res.converged:
            raise AdapterError(i, f"auxiliary scenario problem not solved ({res.message})")
        return res.x

    def solve_augmented(self, i, w, u_hat, alpha):
        return aux_augmented_optimum(self.aux, i, w, u_hat, alpha)

    def solve_augmented_batch(self, Wm, U_hat, alpha):
        if self._alpha != alpha:
            nT = self._H.shape[1]
            self._Hinv = np.ascontiguousarray(np.linalg.inv(self._H + alpha * np.eye(nT)))
            self._alpha = alpha
        rhs = np.ascontiguousarray(self._g() + Wm - alpha * U_hat)
        return -kernels.batched_matvec(self._Hinv, rhs)


def tilde_u_value(tree, X, spec):
    """``E[x_T] - w Var(x_T) - gamma E[sum_{t=1..T} (x_t - xbar)^2]``.

    ``X`` holds wealth paths, shape (S, T+1) including ``x_0``.
    """
    rho = tree.probabilities
    X = np.asarray(X, dtype=float)
    xT = X[:, -1]
    mean = rho @ xT
    var = rho @ (xT - mean) ** 2
    dev = X[:, 1:] - X[:, 1:].mean(axis=1, keepdims=True)
    smooth = rho @ np.einsum("st,st->s", dev, dev)
    return float(mean - spec.w * var - spec.gamma * smooth)


def lambda_bounds(market, spec, tree=None):
    """``(1 + 2 w x0, 1 + 2 w E[x_T])`` with ``E[x_T]`` under the MV(w) policy."""
    if spec.w == 0:
        return 1.0, 1.0
    tree = tree if tree is not None else market.tree()
    _, X = mv_analytical_policy(market, spec.w).evaluate_on_tree(market, tree)
    lo = 1.0 + 2.0 * spec.w * market.x0
    hi = 1.0 + 2.0 * spec.w * float(tree.probabilities @ X[:, -1])
    return lo, max(lo, hi)


@dataclass
class LambdaSearchResult:
    lambda_star: float
    result: object
    wealth: np.ndarray
    grid: list
    fit: np.ndarray = None
    vertex: float = None
    theta: float = None
    bounds: tuple = None
    notes: list = field(default_factory=list)


def lambda_search(tree, market, spec, config=None, theta=None, warm_start=True, jobs=1):
    """Grid search over ``lambda`` with a least-squares parabola refinement.

    Each grid point ``lambda_min + k theta <= lambda_max`` is solved by PHA
    on the auxiliary problem, optionally warm-started from the previous
    point.  The returned ``lambda_star`` maximizes ``tilde_u_value`` over the
    grid and the clamped parabola vertex.

    Returns
    -------
    LambdaSearchResult
        ``grid`` rows are ``(lambda, tilde_u, iterations, converged)``.
    """
    cfg = config or PhaConfig()
    lo, hi = lambda_bounds(market, spec, tree)
    if theta is None:
        theta = (hi - lo) / 20.0
    if hi > lo and not theta > 0:
        raise ValueError("theta must be positive")
    count = int(np.floor((hi - lo) / theta + 1e-9)) + 1 if hi > lo else 1
    lams = [lo + k * theta for k in range(count)]
    adapter = AuxiliaryAdapter(build_auxiliary(market, spec, lo, tree), market.n)
    notes, grid, solved = [], [], {}

    def solve(lam, start):
        adapter.set_lambda(lam)
        res = pha_solve(tree, adapter, cfg, warm_start=start, jobs=jobs)
        X = np.hstack([np.full((tree.n_scenarios, 1), market.x0), adapter.aux.wealth(res.u_hat.values)])
        return res, X

    start = None
    for lam in lams:
        res, X = solve(lam, start)
        val = tilde_u_value(tree, X, spec)
        grid.append((lam, val, res.iterations, res.converged))
        solved[lam] = (res, X, val)
        if warm_start:
            start = (res.u_hat.values, res.w.values)

    fit = vertex = None
    if len(lams) < 3:
        if hi > lo:
            warnings.warn("fewer than 3 grid points; parabola fit skipped", stacklevel=2)
        notes.append("parabola fit skipped: fewer than 3 grid points")
    else:
        fit = np.polyfit(lams, [g[1] for g in grid], 2)
        if fit[0] < 0:
            vertex = float(np.clip(-fit[1] / (2.0 * fit[0]), lo, hi))
            if vertex not in solved:
                nearest = min(solved, key=lambda v: abs(v - vertex))
                near = solved[nearest][0]
                res, X = solve(vertex, (near.u_hat.values, near.w.values) if warm_start else None)
                solved[vertex] = (res, X, tilde_u_value(tree, X, spec))
        else:
            warnings.warn("fitted parabola is not concave; vertex ignored", stacklevel=2)
            notes.append("parabola not concave; vertex ignored")

    lam_star = max(solved, key=lambda v: solved[v][2])
    res, X, _ = solved[lam_star]
    return LambdaSearchResult(lam_star, res, X, grid, fit, vertex, theta, (lo, hi), notes)
