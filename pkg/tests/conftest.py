import numpy as np
import pytest

from liftvol.model import Model


def random_model(seed, scale=0.05) -> Model:
    """Fresh model with its lifting and post networks jittered so that no
    layer is zero."""
    m = Model.create(seed=seed)
    rng = np.random.default_rng(seed + 1000)
    st = m.store
    for prefix in ("predict", "update", "post"):
        mask = st.prefixed(prefix)
        st.values[mask] += rng.normal(scale=scale, size=int(mask.sum()))
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fresh_model():
    return Model.create(seed=0)


@pytest.fixture(scope="session")
def rand_model():
    return random_model(7)
