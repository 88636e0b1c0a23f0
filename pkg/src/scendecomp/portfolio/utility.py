"""Expected HARA utility of terminal wealth with a smoothing penalty.

Per scenario the subproblem minimizes ``-U(x_T) + gamma * S``.  With the
linear wealth map ``x_T = b + g'u`` and the smoothing quadratic
``S = (a + Fu)'M(a + Fu)``, the augmented stationarity condition collapses
to one monotone scalar equation in ``y = x_T``:

    y - beta0 - kappa * U'(y) = 0,
    K = 2 gamma F'MF + alpha I,   q = alpha u_hat - w - 2 gamma F'Ma,
    beta0 = b + g'K^{-1}q,        kappa = g'K^{-1}g,

after which ``u = K^{-1}q + U'(y) K^{-1}g``.
"""
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..convex import DomainError, MinimizerSettings, SmoothObjective, minimize
from ..pha import AdapterError
from .market import MarketError, excess_returns, smoothing_quadratic, wealth_maps


@dataclass(frozen=True)
class UtilitySpec:
    """HARA utility with risk tolerance ``-U'/U'' = a + b x``.

    ``b = 0`` gives ``U = -exp(-x/a)``; ``b = 1`` gives ``U = log(a + x)``;
    any other ``b`` gives ``U = (a + b x)^(1 - 1/b) / (b - 1)``.
    """

    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.b == 0 and not self.a > 0:
            raise MarketError("exponential utility needs a > 0")

    @property
    def kind(self):
        if self.b == 0:
            return kernels.EXPONENTIAL
        if self.b == 1:
            return kernels.LOGARITHMIC
        return kernels.POWER

    def _base(self, x):
        base = self.a + self.b * np.asarray(x, dtype=float)
        if np.any(base <= 0):
            raise DomainError("wealth outside the utility domain a + b*x > 0")
        return base

    def value(self, x):
        if self.b == 0:
            return -np.exp(-np.asarray(x, dtype=float) / self.a)
        base = self._base(x)
        if self.b == 1:
            return np.log(base)
        return base ** (1.0 - 1.0 / self.b) / (self.b - 1.0)

    def marginal(self, x):
        if self.b == 0:
            return np.exp(-np.asarray(x, dtype=float) / self.a) / self.a
        return self._base(x) ** (-1.0 / self.b)

    def curvature(self, x):
        """``U''(x)``."""
        if self.b == 0:
            return -np.exp(-np.asarray(x, dtype=float) / self.a) / self.a**2
        base = self._base(x)
        return -base ** (-1.0 / self.b) / base


def _path_map(m, P):
    # rows s = 1..T of the control-to-wealth map along one return path
    T, n = m.T, m.n
    G = np.zeros((T, n * T))
    for s in range(1, T + 1):
        for t in range(s):
            G[s - 1, t * n:(t + 1) * n] = m.growth(t + 1, s) * P[t]
    return G


def utility_scenario_objective(m, scenario, spec_u, spec_s, u):
    """Value and gradient of ``-U(x_T) + gamma * S`` along one scenario.

    Parameters
    ----------
    m : MarketModel
    scenario : ScenarioPath or array_like, shape (T, n)
        Path of the tree from :meth:`MarketModel.tree`, or its excess returns.
    spec_u : UtilitySpec
    spec_s : SmoothingSpec
    u : array_like, shape (n*T,)

    Raises
    ------
    DomainError
        If terminal wealth leaves the utility domain.
    """
    P = scenario.realization if hasattr(scenario, "realization") else scenario
    P = np.asarray(P, dtype=float).reshape(m.T, m.n)
    u = np.asarray(u, dtype=float)
    G = _path_map(m, P)
    base = m.riskless_path()[1:]
    x = base + G @ u
    value = -float(spec_u.value(x[-1]))
    grad = -float(spec_u.marginal(x[-1])) * G[-1]
    if spec_s.gamma > 0:
        a, F, M = smoothing_quadratic(m, spec_s, G[None], base)
        f = a + F[0] @ u
        value += spec_s.gamma * float(f @ M @ f)
        grad = grad + 2.0 * spec_s.gamma * F[0].T @ (M @ f)
    return value, grad


class UtilityAdapter:
    """PHA subproblems for the utility-with-smoothing family.

    Parameters
    ----------
    market : MarketModel
    utility : UtilitySpec
    smoothing : SmoothingSpec
    tree : ScenarioTree, optional
    settings : MinimizerSettings, optional
        Used by scenario solves and by the generic augmented route.
    method : {"reduced", "generic"}
        ``"reduced"`` solves the augmented problems through the scalar
        root equation; ``"generic"`` runs :func:`scendecomp.convex.minimize`.
    """

    def __init__(self, market, utility, smoothing, tree=None, settings=None, method="reduced"):
        if method not in ("reduced", "generic"):
            raise ValueError("method must be 'reduced' or 'generic'")
        self.market, self.utility, self.smoothing = market, utility, smoothing
        self.tree = tree if tree is not None else market.tree()
        self.settings = settings or MinimizerSettings()
        self.method = method
        self.n, self.T = market.n, market.T
        G, base = wealth_maps(market, self.tree)
        self._g = np.ascontiguousarray(G[:, -1, :])
        self._b = float(base[-1])
        nT = self.n * self.T
        S = self.tree.n_scenarios
        gam = smoothing.gamma
        if gam > 0:
            a, F, M = smoothing_quadratic(market, smoothing, G, base)
            FtM = np.einsum("skv,kj->svj", F, M)
            self._Hs = 2.0 * gam * np.einsum("svj,sjw->svw", FtM, F)
            self._ls = 2.0 * gam * FtM @ a
            self._sq = (a, F, M)
        else:
            self._Hs = np.zeros((S, nT, nT))
            self._ls = np.zeros((S, nT))
            self._sq = None
        self._alpha = None

    def scenario_objective(self, i):
        """Convex objective of scenario ``i`` with value, gradient and Hessian."""
        g, Hs, ls, U = self._g[i], self._Hs[i], self._ls[i], self.utility
        sq = self._sq

        def value(u):
            xT = self._b + g @ u
            v = -float(U.value(xT))
            if sq is not None:
                f = sq[0] + sq[1][i] @ u
                v += self.smoothing.gamma * float(f @ sq[2] @ f)
            return v

        def gradient(u):
            xT = self._b + g @ u
            return -float(U.marginal(xT)) * g + Hs @ u + ls

        def hessian(u):
            xT = self._b + g @ u
            return -float(U.curvature(xT)) * np.outer(g, g) + Hs

        return SmoothObjective(value, gradient, hessian)

    def solve_scenario(self, i):
        res = minimize(self.scenario_objective(i), np.zeros(self.n * self.T), self.settings)
        if not res.converged:
            raise AdapterError(i, f"scenario problem not solved ({res.message}); it may be unbounded")
        return res.x

    def _augmented_objective(self, i, w, u_hat, alpha):
        base = self.scenario_objective(i)

        def value(u):
            d = u - u_hat
            return base.value(u) + u @ w + 0.5 * alpha * d @ d

        def gradient(u):
            return base.gradient(u) + w + alpha * (u - u_hat)

        def hessian(u):
            return base.hessian(u) + alpha * np.eye(u.size)

        return SmoothObjective(value, gradient, hessian)

    def _prepare(self, alpha):
        if self._alpha != alpha:
            nT = self.n * self.T
            self._Kinv = np.ascontiguousarray(np.linalg.inv(self._Hs + alpha * np.eye(nT)))
            self._Kg = kernels.batched_matvec(self._Kinv, self._g)
            self._kappa = np.einsum("sv,sv->s", self._g, self._Kg)
            self._alpha = alpha

    def _reduced(self, W, U_hat, alpha):
        self._prepare(alpha)
        q = np.ascontiguousarray(alpha * U_hat - W - self._ls)
        Kq = kernels.batched_matvec(self._Kinv, q)
        beta0 = self._b + np.einsum("sv,sv->s", self._g, Kq)
        try:
            y, _ = kernels.hara_root(beta0, self._kappa, self.utility.kind, self.utility.a, self.utility.b)
        except ValueError as exc:
            bad = np.flatnonzero(beta0 >= -self.utility.a / self.utility.b)
            raise AdapterError(int(bad[0]) if bad.size else -1, str(exc)) from exc
        return Kq + self.utility.marginal(y)[:, None] * self._Kg

    def solve_augmented(self, i, w, u_hat, alpha):
        if self.method == "reduced":
            self._prepare(alpha)
            K = self._Kinv[i]
            q = alpha * u_hat - w - self._ls[i]
            Kq = K @ q
            beta0 = self._b + self._g[i] @ Kq
            y, _ = kernels.hara_root(np.array([beta0]), self._kappa[i:i + 1], self.utility.kind,
                                     self.utility.a, self.utility.b)
            return Kq + float(self.utility.marginal(y[0])) * self._Kg[i]
        res = minimize(self._augmented_objective(i, w, u_hat, alpha), np.array(u_hat, dtype=float),
                       self.settings)
        if not res.converged:
            raise AdapterError(i, f"augmented problem not solved ({res.message})")
        return res.x

    def solve_augmented_batch(self, W, U_hat, alpha):
        if self.method == "reduced":
            return self._reduced(W, U_hat, alpha)
        return np.vstack([
            self.solve_augmented(i, W[i], U_hat[i], alpha) for i in range(self.tree.n_scenarios)
        ])

    def expected_objective(self, U):
        """``E[U(x_T)] - gamma E[S]`` under stacked controls ``U`` (maximization sign)."""
        vals = [self.scenario_objective(i).value(u) for i, u in enumerate(np.asarray(U))]
        return -float(self.tree.probabilities @ np.array(vals))


def reverse_beta(m, spec_u, t, x_t, u_t):
    """Invert ``u_t = beta_t (a / prod_{tau>t} r_tau + b r_t x_t)`` for ``beta_t``."""
    scale = spec_u.a / m.growth(t + 1, m.T) + spec_u.b * m.r[t] * x_t
    return np.asarray(u_t, dtype=float) / scale


def beta_residual(m, spec_u, t, x_t, u_t, form="literal"):
    """Residual of the stage-``t`` optimality system at ``(x_t, beta_t)``.

    ``beta_t`` is recovered from ``u_t`` with :func:`reverse_beta` and the
    return value is ``sum_k pi_k U'(arg_k) P_{t,k}`` with
    ``arg_k = r_t x_t + (a / prod r + b r_t x_t) beta_t'P_{t,k}``.

    ``form="dp"`` evaluates ``U'`` at ``prod_{tau>t} r_tau * arg_k`` instead,
    which is the stationarity condition of the stage-``t`` DP step for
    exponential utility (and for ``a = 0``).  Both forms agree at
    ``t = T - 1``.
    """
    if form not in ("literal", "dp"):
        raise ValueError("form must be 'literal' or 'dp'")
    dist = excess_returns(m)[t]
    beta = reverse_beta(m, spec_u, t, x_t, u_t)
    scale = spec_u.a / m.growth(t + 1, m.T) + spec_u.b * m.r[t] * x_t
    arg = m.r[t] * x_t + scale * (dist.outcomes @ beta)
    if form == "dp":
        arg = m.growth(t + 1, m.T) * arg
    return (dist.probabilities * spec_u.marginal(arg)) @ dist.outcomes
