import numpy as np
import pandas as pd
import pytest

import distreg as d

SWISS_FORMULA = "participation ~ income + age + education + youngkids + oldkids + foreign + I(age^2)"


@pytest.fixture(scope="session")
def swiss():
    return d.load_swisslabor()


@pytest.fixture(scope="session")
def swiss_frame(swiss):
    return d.model_frame(SWISS_FORMULA, swiss, "binomial")


@pytest.fixture(scope="session")
def swiss_fit(swiss_frame):
    return d.backfit(swiss_frame)


@pytest.fixture(scope="session")
def mcycle_frame():
    return d.model_frame(["accel ~ s(times, k=20)", "sigma ~ s(times, k=20)"], d.load_mcycle(), "gaussian")


@pytest.fixture
def small_table():
    rng = np.random.default_rng(0)
    n = 60
    return pd.DataFrame({
        "y": rng.normal(size=n),
        "x": rng.uniform(size=n),
        "z": rng.uniform(1, 2, size=n),
        "g": pd.Categorical(rng.choice(["b", "a", "c"], size=n)),
    })
