import numpy as np
import pytest

from ucgan.autodiff import CATALOG
from ucgan.gradsuite import CASES, run_case, run_suite


def test_every_catalog_operator_has_a_case():
    covered = {name.split("/", 1)[1] for name in CASES if name.startswith("op/")}
    assert set(CATALOG) <= covered | {"conv2d_1x1"}


@pytest.mark.parametrize("name", sorted(CASES))
def test_case_passes_on_one_seed(name):
    res = run_case(name, seed=123)
    assert res.passed, res


def test_suite_report():
    rep = run_suite(seeds=[0], names=["op/add", "loss/entropy"])
    assert rep.passed and len(rep.results) == 2
    assert set(rep.worst()) == {"op/add", "loss/entropy"}
    assert all(np.isfinite(v) for v in rep.worst().values())
