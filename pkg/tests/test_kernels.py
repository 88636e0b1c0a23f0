import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scendecomp import _kernels_py, kernels
from scendecomp.tree import StageDistribution, build_tree

compiled = pytest.importorskip("scendecomp._kernels_c")

seeds = st.integers(0, 2**16)


def random_inputs(seed, sizes=(3, 2, 2), n=2):
    rng = np.random.default_rng(seed)
    stages = []
    for k in sizes:
        p = rng.uniform(0.1, 1, k)
        stages.append(StageDistribution(rng.normal(size=(k, 1)), p / p.sum()))
    tree = build_tree(stages)
    U = rng.normal(size=(tree.n_scenarios, n * len(sizes)))
    return tree, U, rng


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_backend_selected_by_environment():
    env = dict(os.environ, SCENDECOMP_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", "from scendecomp import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@given(seeds)
def test_aggregate_parity(seed):
    tree, U, _ = random_inputs(seed)
    args = (U, tree.bundle_ids, tree.n_bundles, tree.probabilities, 2)
    np.testing.assert_array_equal(compiled.aggregate(*args), _kernels_py.aggregate(*args))


@given(seeds, st.floats(0.01, 10))
def test_multiplier_step_parity(seed, alpha):
    tree, U, rng = random_inputs(seed)
    W, Uh, Uo = (rng.normal(size=U.shape) for _ in range(3))
    Wc, mc = compiled.multiplier_step(W, U, Uh, Uo, tree.probabilities, alpha)
    Wp, mp = _kernels_py.multiplier_step(W, U, Uh, Uo, tree.probabilities, alpha)
    np.testing.assert_array_equal(Wc, Wp)
    assert mc == pytest.approx(mp, rel=1e-14)


@given(seeds)
def test_batched_matvec_parity(seed):
    rng = np.random.default_rng(seed)
    M, x = rng.normal(size=(7, 4, 4)), rng.normal(size=(7, 4))
    np.testing.assert_allclose(compiled.batched_matvec(M, x), _kernels_py.batched_matvec(M, x), rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(_kernels_py.batched_matvec(M, x), np.stack([m @ v for m, v in zip(M, x)]))


@pytest.mark.parametrize(
    "kind, a, b",
    [(kernels.EXPONENTIAL, 1.0, 0.0), (kernels.LOGARITHMIC, 1.0, 1.0), (kernels.POWER, 2.0, 0.5)],
)
@given(seed=seeds)
def test_hara_root_parity_and_residual(kind, a, b, seed):
    rng = np.random.default_rng(seed)
    beta0 = rng.uniform(0.0, 5.0, 20)
    kappa = rng.uniform(0.0, 50.0, 20)
    yc, _ = compiled.hara_root(beta0, kappa, kind, a, b)
    yp, _ = _kernels_py.hara_root(beta0, kappa, kind, a, b)
    np.testing.assert_allclose(yc, yp, rtol=1e-12, atol=1e-12)
    d1, _ = _kernels_py._marginal(yp, kind, a, b)
    np.testing.assert_allclose(yp - beta0 - kappa * d1, 0.0, atol=1e-9 * (1 + np.abs(yp)).max())


def test_hara_root_zero_kappa_is_identity():
    beta0 = np.array([0.3, -2.0])
    y, _ = kernels.hara_root(beta0, np.zeros(2), kernels.EXPONENTIAL, 1.0, 0.0)
    np.testing.assert_array_equal(y, beta0)


def test_hara_root_negative_b_domain():
    with pytest.raises(ValueError):
        _kernels_py.hara_root(np.array([5.0]), np.array([1.0]), kernels.POWER, 1.0, -0.5)
    with pytest.raises(ValueError):
        compiled.hara_root(np.array([5.0]), np.array([1.0]), kernels.POWER, 1.0, -0.5)
