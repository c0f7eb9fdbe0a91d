import numpy as np
import pytest

from necovar.panel import ReturnPanel


def make_panel(values, labels=None):
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    labels = labels or tuple(f"X{i+1}" for i in range(p))
    times = (np.datetime64("2000-01-01") + np.arange(n).astype("timedelta64[D]")).astype(
        "datetime64[s]"
    )
    return ReturnPanel(tuple(labels), times, values)


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
