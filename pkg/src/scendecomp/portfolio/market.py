"""Market model, wealth dynamics and quadratic-variation smoothing.

Wealth evolves as ``x_{t+1} = r_t x_t + P_t'u_t`` where ``P_t`` is the
excess return and ``u_t`` the dollar amounts held in the risky assets.
Asset indices are 0-based throughout.
"""
from dataclasses import dataclass

import numpy as np

from ..tree import StageDistribution, build_tree


class MarketError(ValueError):
    """Invalid market or smoothing specification."""


@dataclass(frozen=True)
class MarketModel:
    """Riskless rates and per-stage risky-return distributions.

    Parameters
    ----------
    r : array_like, shape (T,)
        Riskless total returns, all positive.
    returns : sequence of StageDistribution
        Outcomes in R^n, either total returns ``e_t`` or excess returns
        ``P_t`` depending on ``excess``.
    x0 : float
    excess : bool
    """

    r: np.ndarray
    returns: tuple
    x0: float
    excess: bool = True

    def __post_init__(self):
        r = np.array(self.r, dtype=float).ravel()
        returns = tuple(self.returns)
        if r.size == 0 or r.size != len(returns):
            raise MarketError("need one riskless rate per return distribution")
        if np.any(r <= 0) or not np.all(np.isfinite(r)):
            raise MarketError("riskless returns must be positive")
        if any(not isinstance(d, StageDistribution) for d in returns):
            raise MarketError("returns must be StageDistribution instances")
        if len({d.dim for d in returns}) != 1:
            raise MarketError("all return distributions must share the asset count")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "x0", float(self.x0))

    @property
    def T(self):
        return self.r.size

    @property
    def n(self):
        return self.returns[0].dim

    def tree(self):
        """Scenario tree over the excess returns."""
        return build_tree(excess_returns(self))

    def growth(self, start, stop):
        """``prod_{tau=start}^{stop-1} r_tau`` (1 for an empty range)."""
        return float(np.prod(self.r[start:stop]))

    def riskless_path(self):
        """``x0 * prod_{tau<t} r_tau`` for t = 0..T."""
        return self.x0 * np.concatenate([[1.0], np.cumprod(self.r)])


def excess_returns(m):
    """Excess-return distributions ``P_t = e_t - r_t 1``."""
    if m.excess:
        return list(m.returns)
    return [
        StageDistribution(d.outcomes - r, d.probabilities) for d, r in zip(m.returns, m.r)
    ]


def wealth_trajectory(m, scenario, controls):
    """Wealth ``(x_0, ..., x_T)`` along one scenario.

    Parameters
    ----------
    m : MarketModel
    scenario : ScenarioPath or array_like, shape (T, n)
        A path of the tree built by :meth:`MarketModel.tree`, or the excess
        returns along the path directly.
    controls : array_like, shape (T, n) or (n*T,)
    """
    P = scenario.realization if hasattr(scenario, "realization") else scenario
    P = np.asarray(P, dtype=float).reshape(m.T, -1)
    u = np.asarray(controls, dtype=float)
    if u.size != m.T * m.n or P.shape[1] != m.n:
        raise MarketError(f"expected {m.T} controls and returns of dimension {m.n}")
    u = u.reshape(m.T, m.n)
    x = np.empty(m.T + 1)
    x[0] = m.x0
    for t in range(m.T):
        x[t + 1] = m.r[t] * x[t] + P[t] @ u[t]
    return x


def wealth_maps(m, tree):
    """Per-scenario linear maps from stacked controls to ``x_1..x_T``.

    Returns
    -------
    G : (S, T, n*T) array
        Row ``s-1`` of ``G[i]`` maps ``u`` to the control-driven part of
        ``x_s``; block ``(s, t)`` is ``prod_{tau=t+1}^{s-1} r_tau P_t'``.
    base : (T,) array
        Riskless part ``x0 * prod_{tau<s} r_tau`` for s = 1..T.
    """
    T, n = m.T, m.n
    P = tree.noise()
    G = np.zeros((tree.n_scenarios, T, n * T))
    for s in range(1, T + 1):
        for t in range(s):
            G[:, s - 1, t * n:(t + 1) * n] = m.growth(t + 1, s) * P[:, t]
    return G, m.riskless_path()[1:]


def wealth_paths(m, tree, U):
    """Wealth of every scenario under stacked controls ``U`` (S, n*T); shape (S, T+1)."""
    G, base = wealth_maps(m, tree)
    X = base + np.einsum("stv,sv->st", G, np.asarray(U, dtype=float))
    return np.hstack([np.full((tree.n_scenarios, 1), m.x0), X])


@dataclass(frozen=True)
class SmoothingSpec:
    """Quadratic-variation penalty ``gamma * sum_{t in stages} (f_t - mean f)^2``.

    ``kind="wealth"`` uses ``f_t = x_t``; ``kind="investment"`` uses
    ``f_t = sum_{k in assets} u_t^k`` (0-based asset indices).
    """

    gamma: float = 0.0
    kind: str = "wealth"
    stages: tuple = ()
    assets: tuple = ()

    def __post_init__(self):
        if self.kind not in ("wealth", "investment"):
            raise MarketError("smoothing kind must be 'wealth' or 'investment'")
        if not self.gamma >= 0:
            raise MarketError("gamma must be nonnegative")
        object.__setattr__(self, "stages", tuple(int(t) for t in self.stages))
        object.__setattr__(self, "assets", tuple(int(k) for k in self.assets))
        if self.gamma > 0 and not self.stages:
            raise MarketError("smoothing needs a nonempty stage set")
        if self.kind == "investment" and self.gamma > 0 and not self.assets:
            raise MarketError("investment smoothing needs a nonempty asset set")

    def validate(self, T, n):
        limit = T if self.kind == "wealth" else T - 1
        if any(t < 0 or t > limit for t in self.stages):
            raise MarketError(f"smoothing stages must lie in 0..{limit}")
        if any(k < 0 or k >= n for k in self.assets):
            raise MarketError(f"asset indices must lie in 0..{n - 1}")


def smoothing_value(traj, controls, spec):
    """Quadratic variation of ``f`` over ``spec.stages``; nonnegative.

    Examples
    --------
    >>> smoothing_value([1.0, 1.0, 2.0, 3.0], None, SmoothingSpec(1.0, "wealth", (1, 2, 3)))
    2.0
    """
    if not spec.stages:
        raise MarketError("smoothing stage set is empty")
    idx = list(spec.stages)
    if spec.kind == "wealth":
        f = np.asarray(traj, dtype=float)[idx]
    else:
        u = np.asarray(controls, dtype=float)
        if u.ndim != 2:
            raise MarketError("investment smoothing needs controls shaped (T, n)")
        f = u[idx][:, list(spec.assets)].sum(axis=1)
    dev = f - f.mean()
    return float(dev @ dev)


def smoothing_quadratic(m, spec, G, base):
    """Write the smoothing term of every scenario as ``(a + F_i u)' M (a + F_i u)``.

    Returns ``a`` (|stages|,), ``F`` (S, |stages|, n*T) and the centering
    matrix ``M``.
    """
    spec.validate(m.T, m.n)
    k = len(spec.stages)
    S, nT = G.shape[0], G.shape[2]
    M = np.eye(k) - 1.0 / k if k else np.zeros((0, 0))
    a = np.zeros(k)
    F = np.zeros((S, k, nT))
    for j, t in enumerate(spec.stages):
        if spec.kind == "wealth":
            if t == 0:
                a[j] = m.x0
            else:
                a[j] = base[t - 1]
                F[:, j] = G[:, t - 1]
        else:
            for asset in spec.assets:
                F[:, j, t * m.n + asset] = 1.0
    return a, F, M
