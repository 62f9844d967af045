import json
import math
from importlib import resources

import numpy as np
import pytest

from hdqkd import channel


def load_schema(name: str) -> dict:
    return json.loads(resources.files("hdqkd").joinpath(f"schemas/{name}").read_text())


def binomial_sigma(p, n):
    return np.sqrt(np.asarray(p) * (1 - np.asarray(p)) / n)


def chi2_2x2_pvalue(a, b) -> float:
    """Pearson chi-square independence test on two boolean sequences (1 dof)."""
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    obs = np.array([[np.sum(a & b), np.sum(a & ~b)], [np.sum(~a & b), np.sum(~a & ~b)]], float)
    exp = obs.sum(1, keepdims=True) * obs.sum(0, keepdims=True) / obs.sum()
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    return math.erfc(math.sqrt(chi2 / 2))


@pytest.fixture(scope="session")
def ideal_preset():
    return channel.load_preset("ideal")
