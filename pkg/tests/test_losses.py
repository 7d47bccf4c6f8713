import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kritensor import losses as L
from kritensor.errors import ConfigError, DataError


def test_class_change_clean_is_zero():
    cc = L.LossSpec("cc", "class_change")
    assert L.evaluate(cc, np.array([0.0, 1.0, 0.0]), clean_class=1, true_label=0) == 0.0
    assert L.evaluate(cc, np.array([1.0, 0.0, 0.0]), clean_class=1, true_label=0) == 1.0


def test_misclassification_against_label():
    mc = L.LossSpec("mc", "misclassification")
    assert L.evaluate(mc, np.array([0.0, 1.0]), clean_class=0, true_label=1) == 0.0
    assert L.evaluate(mc, np.array([0.0, 1.0]), clean_class=1, true_label=0) == 1.0
    # class change measured against the label instead of the clean prediction
    cc_label = L.LossSpec("x", "class_change", reference="true_label")
    assert L.evaluate(cc_label, np.array([0.0, 1.0]), clean_class=1, true_label=0) == 1.0


def test_severity_lookup():
    sev = L.LossSpec("sev", "severity", cost_matrix=[[0, 1], [5, 0]])
    assert L.evaluate(sev, np.array([2.0, 1.0]), clean_class=1, true_label=1) == 5.0
    assert L.evaluate(sev, np.array([2.0, 1.0]), clean_class=1, true_label=0) == 0.0


def test_cross_entropy_uniform():
    ce = L.LossSpec("ce", "cross_entropy")
    assert L.evaluate(ce, np.zeros(4), 0, 2) == pytest.approx(math.log(4), rel=1e-15)


def test_ties_break_low():
    mc = L.LossSpec("mc", "misclassification")
    assert L.evaluate(mc, np.array([0.5, 0.5]), 0, 0) == 0.0
    assert L.evaluate(mc, np.array([0.5, 0.5]), 0, 1) == 1.0


@given(
    logits=st.lists(st.floats(-50, 50), min_size=3, max_size=3),
    ref=st.integers(0, 2),
    label=st.integers(0, 2),
)
def test_severity_with_unit_costs_is_misclassification(logits, ref, label):
    x = np.array(logits)
    ones = L.LossSpec("s", "severity", cost_matrix=1 - np.eye(3))
    mc = L.LossSpec("m", "misclassification")
    assert L.evaluate(ones, x, ref, label) == L.evaluate(mc, x, ref, label)
    for kind in L.KINDS:
        s = ones if kind == "severity" else L.LossSpec("k", kind)
        v = L.evaluate(s, x, ref, label)
        assert v >= 0 and (kind in ("severity", "cross_entropy") or v in (0.0, 1.0))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "hinge"},
        {"kind": "severity"},
        {"kind": "severity", "cost_matrix": [[1, 1], [1, 0]]},
        {"kind": "severity", "cost_matrix": [[0, -1], [1, 0]]},
        {"kind": "severity", "cost_matrix": [[0, 1, 1], [1, 0, 1]]},
        {"kind": "class_change", "reference": "oracle"},
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigError):
        L.LossSpec("x", **kwargs)


def test_reference_out_of_range():
    with pytest.raises(DataError):
        L.evaluate(L.LossSpec("c", "class_change"), np.zeros(2), 2, 0)
    sev = L.LossSpec("s", "severity", cost_matrix=1 - np.eye(3))
    with pytest.raises(DataError):
        L.evaluate(sev, np.zeros(2), 0, 0)


def test_cost_matrix_csv(tmp_path):
    (tmp_path / "c.csv").write_text("0,1,2\n3,0,4\n5,6,0\n")
    c = L.load_cost_matrix_csv(tmp_path / "c.csv")
    assert c.tolist() == [[0, 1, 2], [3, 0, 4], [5, 6, 0]]
    (tmp_path / "bad.csv").write_text("0,x\n1,0\n")
    with pytest.raises(DataError):
        L.load_cost_matrix_csv(tmp_path / "bad.csv")
