"""Finite product scenario trees and nonanticipativity aggregation."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels

PROB_TOL = 1e-12


class TreeError(ValueError):
    """Invalid tree input."""


@dataclass(frozen=True)
class StageDistribution:
    """Discrete distribution of one stage's noise vector.

    Parameters
    ----------
    outcomes : array_like, shape (k, p)
        One row per outcome.  A 1-d input is read as ``k`` scalar outcomes.
    probabilities : array_like, shape (k,)
        Strictly positive, summing to one within ``1e-12``.
    """

    outcomes: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        out = np.array(self.outcomes, dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        prob = np.array(self.probabilities, dtype=float).ravel()
        if out.ndim != 2 or out.shape[0] == 0 or out.shape[1] == 0:
            raise TreeError("outcomes must be a nonempty list of equal-length vectors")
        if prob.shape[0] != out.shape[0]:
            raise TreeError(
                f"{out.shape[0]} outcomes but {prob.shape[0]} probabilities"
            )
        if not np.all(np.isfinite(out)) or not np.all(np.isfinite(prob)):
            raise TreeError("outcomes and probabilities must be finite")
        if np.any(prob <= 0.0):
            raise TreeError("outcome probabilities must be strictly positive")
        if abs(prob.sum() - 1.0) > PROB_TOL:
            raise TreeError(f"probabilities sum to {prob.sum()!r}, not 1")
        out.setflags(write=False)
        prob.setflags(write=False)
        object.__setattr__(self, "outcomes", out)
        object.__setattr__(self, "probabilities", prob)

    @classmethod
    def uniform(cls, outcomes):
        """Equiprobable distribution over ``outcomes``."""
        out = np.array(outcomes, dtype=float)
        k = out.shape[0]
        return cls(out, np.full(k, 1.0 / k))

    @property
    def size(self):
        return self.outcomes.shape[0]

    @property
    def dim(self):
        return self.outcomes.shape[1]

    def mean(self):
        return self.probabilities @ self.outcomes

    def second_moment(self):
        return np.einsum("k,ki,kj->ij", self.probabilities, self.outcomes, self.outcomes)


@dataclass(frozen=True)
class ScenarioPath:
    outcome_indices: tuple
    realization: np.ndarray


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Product scenario tree in lexicographic scenario order.

    Attributes
    ----------
    stages : tuple of StageDistribution
    outcome_index : (S, T) int array
        Outcome index of every scenario at every stage.
    probabilities : (S,) array
        Scenario probabilities ``rho``.
    bundle_ids : (T, S) int array
        Bundle of every scenario at every stage; ids follow first occurrence.
    n_bundles : (T,) int array
    """

    stages: tuple
    outcome_index: np.ndarray
    probabilities: np.ndarray
    bundle_ids: np.ndarray
    n_bundles: np.ndarray
    _noise: np.ndarray = field(repr=False)

    @property
    def horizon(self):
        return len(self.stages)

    T = horizon

    @property
    def n_scenarios(self):
        return self.probabilities.shape[0]

    @property
    def scenarios(self):
        return [self.scenario(i) for i in range(self.n_scenarios)]

    def scenario(self, i):
        return ScenarioPath(tuple(int(k) for k in self.outcome_index[i]), self._noise[i])

    def noise(self):
        """Stacked realizations, shape (S, T, p)."""
        return self._noise.reshape(self.n_scenarios, self.horizon, -1)

    def stacked_noise(self):
        """Stacked realizations ``xi^i`` as rows, shape (S, p*T)."""
        return self._noise

    def bundles(self, t):
        """Scenario index arrays of the bundles at stage ``t``, in id order."""
        self._check_stage(t)
        ids = self.bundle_ids[t]
        return [np.flatnonzero(ids == b) for b in range(self.n_bundles[t])]

    def bundle_representatives(self, t):
        """First scenario of each bundle at stage ``t``."""
        self._check_stage(t)
        _, first = np.unique(self.bundle_ids[t], return_index=True)
        return first

    def _check_stage(self, t):
        if not 0 <= t < self.horizon:
            raise TreeError(f"stage {t} outside 0..{self.horizon - 1}")


def build_tree(stages):
    """Enumerate the product tree of independent stage distributions.

    Examples
    --------
    >>> st = StageDistribution.uniform([[1.0], [-1.0]])
    >>> tree = build_tree([st, st, st])
    >>> tree.n_scenarios, list(tree.n_bundles)
    (8, [1, 2, 4])
    """
    stages = tuple(stages)
    if not stages:
        raise TreeError("a tree needs at least one stage")
    for s in stages:
        if not isinstance(s, StageDistribution):
            raise TreeError("stages must be StageDistribution instances")
    dims = {s.dim for s in stages}
    if len(dims) != 1:
        raise TreeError("all stages must share the noise dimension")
    sizes = [s.size for s in stages]
    T = len(stages)
    idx = np.indices(sizes).reshape(T, -1).T.astype(np.int64)
    S = idx.shape[0]
    rho = np.ones(S)
    for t, s in enumerate(stages):
        rho = rho * s.probabilities[idx[:, t]]
    if abs(rho.sum() - 1.0) > PROB_TOL:
        raise TreeError(f"scenario probabilities sum to {rho.sum()!r}")
    # In lexicographic order the prefix of length t is the flat index of the
    # first t coordinates, which is already a first-occurrence numbering.
    bundle_ids = np.zeros((T, S), dtype=np.int64)
    n_bundles = np.ones(T, dtype=np.int64)
    for t in range(1, T):
        bundle_ids[t] = bundle_ids[t - 1] * sizes[t - 1] + idx[:, t - 1]
        n_bundles[t] = n_bundles[t - 1] * sizes[t - 1]
    noise = np.concatenate([stages[t].outcomes[idx[:, t]] for t in range(T)], axis=1)
    for arr in (idx, rho, bundle_ids, n_bundles, noise):
        arr.setflags(write=False)
    return ScenarioTree(stages, idx, rho, bundle_ids, n_bundles, noise)


def aggregate(tree, t, controls):
    """Bundle-conditional expectation of stage-``t`` controls.

    Parameters
    ----------
    tree : ScenarioTree
    t : int
        Stage index.
    controls : array_like, shape (S, n)
        One control vector per scenario.

    Returns
    -------
    (S, n) array, constant across each bundle of stage ``t``.
    """
    tree._check_stage(t)
    u = np.asarray(controls, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] != tree.n_scenarios:
        raise TreeError(f"expected {tree.n_scenarios} control rows, got {u.shape[0]}")
    n = u.shape[1]
    ids = np.ascontiguousarray(tree.bundle_ids[t:t + 1])
    nb = np.ascontiguousarray(tree.n_bundles[t:t + 1])
    return kernels.aggregate(np.ascontiguousarray(u), ids, nb, tree.probabilities, n)


def aggregate_all(tree, U, n):
    """Apply :func:`aggregate` to every stage block of stacked controls ``U`` (S, n*T)."""
    U = np.ascontiguousarray(U, dtype=float)
    if U.shape != (tree.n_scenarios, n * tree.horizon):
        raise TreeError(f"expected shape {(tree.n_scenarios, n * tree.horizon)}, got {U.shape}")
    return kernels.aggregate(U, tree.bundle_ids, tree.n_bundles, tree.probabilities, n)


def projection_matrix(tree, t, n):
    """Matrix ``T_t`` acting on scenario-major stacked stage-``t`` controls.

    Entry ``(i*n + a, j*n + b)`` equals ``rho_j / rho(bundle)`` when ``i`` and
    ``j`` share a bundle and ``a == b``, else zero.
    """
    tree._check_stage(t)
    if n < 1:
        raise TreeError("control dimension must be positive")
    ids = tree.bundle_ids[t]
    rho = tree.probabilities
    mass = np.bincount(ids, weights=rho, minlength=tree.n_bundles[t])
    same = ids[:, None] == ids[None, :]
    weights = np.where(same, rho[None, :] / mass[ids][:, None], 0.0)
    return np.kron(weights, np.eye(n))
