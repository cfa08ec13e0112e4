import numpy as np
import pytest

import distreg as d
from distreg import datasets


def test_bundled_shapes():
    sw = d.load_swisslabor()
    assert sw.shape == (872, 7)
    assert list(sw.participation.cat.categories) == ["no", "yes"]
    mc = d.load_mcycle()
    assert mc.shape == (133, 2) and list(mc.columns) == ["times", "accel"]


def test_gamart_reproducible():
    a, b = d.gamart(200, seed=3), d.gamart(200, seed=3)
    assert a.equals(b)
    assert set(a.fac.cat.categories) == {"low", "medium", "high"}
    assert a[["x1", "x2", "x3"]].stack().between(0, 1).all()


def test_ztnb_counts_positive():
    tab = datasets.simulate_ztnb(2000, seed=1)
    assert tab.y.min() >= 1
    tr = datasets.ztnb_truth(tab.x1.to_numpy(), tab.x2.to_numpy())
    # the zero-truncated mean is mu / (1 - P(0))
    p0 = (tr["theta"] / (tr["theta"] + tr["mu"])) ** tr["theta"]
    assert tab.y.mean() == pytest.approx(np.mean(tr["mu"] / (1 - p0)), rel=0.05)


def test_growth_and_lm_generators():
    g = datasets.simulate_growth(2, seed=1)
    assert len(g) == 60 and g.time.min() == 1 and g.time.max() == 30
    tab, X, beta = datasets.simulate_lm(50, 4, seed=2)
    assert X.shape == (50, 4) and list(tab.columns) == ["y", "x1", "x2", "x3"]
    np.testing.assert_array_equal(beta, [1.0, 0.5, -0.5, 1.0])
    np.testing.assert_allclose(X[:, 1:], tab[["x1", "x2", "x3"]].to_numpy())
