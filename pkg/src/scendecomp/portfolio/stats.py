"""Wealth statistics and first-passage bankruptcy rates."""
import numpy as np


def wealth_statistics(tree, X):
    """Per-stage probability-weighted mean, variance and worst case.

    Parameters
    ----------
    tree : ScenarioTree
    X : (S, T+1) array
        Wealth paths.

    Returns
    -------
    dict with arrays ``mean``, ``var`` and ``worst`` of length T+1.
    """
    rho = tree.probabilities
    X = np.asarray(X, dtype=float)
    mean = rho @ X
    var = rho @ (X - mean) ** 2
    return {"mean": mean, "var": var, "worst": X.min(axis=0)}


def bankruptcy_rate(tree, X, benchmarks):
    """First-passage bankruptcy rates ``BR_1..BR_T``.

    A scenario is counted at ``t`` when ``x_t < x_t^b`` while
    ``x_tau >= x_tau^b`` for all ``tau < t``; the rate divides by the
    number of scenarios still surviving.

    Parameters
    ----------
    tree : ScenarioTree
        Only used for the scenario count.
    X : (S, T+1) array
    benchmarks : (T+1,) array
        ``x_0^b`` is ignored (``BR_0 = 0``).

    Returns
    -------
    rates : (T,) array
    empty : (T,) bool array
        True where no scenario survived to ``t``; the rate is then 0.
    """
    X = np.asarray(X, dtype=float)
    b = np.asarray(benchmarks, dtype=float)
    if X.shape[0] != tree.n_scenarios or b.size != X.shape[1]:
        raise ValueError("benchmarks must cover stages 0..T")
    alive = np.ones(X.shape[0], dtype=bool)
    T = X.shape[1] - 1
    rates, empty = np.zeros(T), np.zeros(T, dtype=bool)
    for t in range(1, T + 1):
        survivors = int(alive.sum())
        hit = alive & (X[:, t] < b[t])
        if survivors == 0:
            empty[t - 1] = True
        else:
            rates[t - 1] = hit.sum() / survivors
        alive &= ~hit
    return rates, empty
