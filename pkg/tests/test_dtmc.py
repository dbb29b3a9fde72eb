import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eetwin.dtmc import (
    DtmcBelief,
    DtmcModel,
    HealthMonitor,
    InvalidModel,
    InvalidStep,
    build_dtmc,
    confidence,
    decide,
    observe,
    reachability,
    two_state_model,
)


def bayes_ok(p, readings, out_ok=0.05, out_failed=0.8):
    """Scalar forward filter for the absorbing two-state chain."""
    ok = 1.0
    for in_range in readings:
        pred_ok, pred_f = ok * (1 - p), ok * p + (1 - ok)
        l_ok = (1 - out_ok) if in_range else out_ok
        l_f = (1 - out_failed) if in_range else out_failed
        ok = pred_ok * l_ok / (pred_ok * l_ok + pred_f * l_f)
    return ok


def run(model, readings):
    b = DtmcBelief.initial("c", model)
    for r in readings:
        b = observe(model, b, r)
    return b


MODEL = two_state_model(0.01)


@pytest.mark.parametrize("readings, expected", [
    ((True,), 0.99788),
    ((False,), 0.86087),
    ((False, False), 0.26500),
])
def test_filter_oracle(readings, expected):
    got = confidence(run(MODEL, readings))
    assert got == pytest.approx(bayes_ok(0.01, readings), abs=1e-12)
    assert got == pytest.approx(expected, abs=1e-5)


def test_one_outlier_out_of_range_closed_form():
    assert confidence(run(MODEL, [False])) == pytest.approx(0.99 * 0.05 / (0.99 * 0.05 + 0.01 * 0.8), abs=1e-12)


def test_decide():
    assert decide(run(MODEL, [False])) is None
    d = decide(run(MODEL, [False, False]))
    assert d is not None and d.kind == "SHUTDOWN" and "c" in d.reason
    exact = DtmcBelief("c", (0.8, 0.2))
    assert decide(exact, 0.8) is None
    assert decide(DtmcBelief("c", (0.7999999, 0.2000001)), 0.8) is not None
    with pytest.raises(ValueError):
        decide(exact, 1.5)


def test_confidence_extremes():
    assert confidence(DtmcBelief("c", (1.0, 0.0))) == 1.0
    assert confidence(DtmcBelief("c", (0.0, 1.0))) == 0.0


def test_build_dtmc():
    assert build_dtmc(0.0, 1.0).transition[0, 1] == 0.0
    assert build_dtmc(1e9, 3600.0).transition[0, 1] == pytest.approx(1 - math.exp(-1), abs=1e-12)
    with pytest.raises(InvalidStep):
        build_dtmc(10.0, 0.0)
    with pytest.raises(InvalidModel):
        build_dtmc(-1.0, 1.0)


def test_degenerate_likelihood():
    model = DtmcModel(("OK", "Failed"), np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, 1.0]), np.array([1.0, 0.0]))
    b0 = DtmcBelief.initial("c", model)
    b1 = observe(model, b0, False)
    assert b1.degenerate and b1.belief == b0.belief and b1.step_count == 1


@pytest.mark.parametrize("doc", [
    {"states": ["OK", "Failed"], "transition": [[0.5, 0.4], [0, 1]], "obs_in_range": [1, 0], "initial": [1, 0]},
    {"states": ["OK", "Failed"], "transition": [[1, 0], [0, 1]], "obs_in_range": [1.2, 0], "initial": [1, 0]},
    {"states": ["OK", "Failed"], "transition": [[1, 0], [0, 1]], "obs_in_range": [1, 0], "initial": [0.5, 0.4]},
    {"states": ["OK"], "transition": [[1, 0], [0, 1]], "obs_in_range": [1, 0], "initial": [1, 0]},
    {"states": ["OK", "Bad"], "transition": [[1, 0], [0, 1]], "obs_in_range": [1, 0], "initial": [1, 0]},
    {"states": ["OK", "Failed"]},
])
def test_invalid_models(doc):
    with pytest.raises(InvalidModel):
        DtmcModel.from_dict(doc)


def test_shipped_dtmc_document():
    from eetwin.casestudy import data_path
    model = DtmcModel.load(data_path("dtmc.json"))
    assert DtmcModel.from_dict(model.to_dict()).to_dict() == model.to_dict()
    assert reachability(model, 1) == pytest.approx(0.01)


def test_reachability_examples():
    assert reachability(MODEL, 0) == 0.0
    assert reachability(MODEL, 1) == pytest.approx(0.01, abs=1e-15)
    assert reachability(MODEL, 100) == pytest.approx(1 - 0.99 ** 100, abs=1e-12)
    assert reachability(MODEL, 100) == pytest.approx(0.6340, abs=1e-4)


def test_reachability_with_recovery_counts_first_visit():
    model = two_state_model(0.1, p_recover=0.5)
    assert reachability(model, 3) == pytest.approx(1 - 0.9 ** 3, abs=1e-12)


def test_monitor_single_directive_per_breach():
    mon = HealthMonitor({"f": MODEL})
    verdicts = [mon.observe("f", False) for _ in range(5)]
    assert [v is not None for v in verdicts] == [False, True, False, False, False]
    assert mon.observe("ghost", False) is None


def test_monitor_quiet_on_in_range_stream():
    mon = HealthMonitor.for_components([type("C", (), {"id": "f", "fit": 40.0})()], 0.01)
    assert all(mon.observe("f", True) is None for _ in range(10_000))
    assert mon.confidence("f") > 0.999


def test_monitor_rearms():
    mon = HealthMonitor({"f": MODEL}, thresholds={"f": 0.5})
    assert mon.observe("f", False) is None
    assert mon.observe("f", False) is not None
    # with an absorbing chain the belief never returns above 0.5
    assert all(mon.observe("f", True) is None for _ in range(3))
    rec = HealthMonitor({"f": two_state_model(0.01, p_recover=0.5)})
    assert rec.observe("f", False) is None and rec.observe("f", False) is not None
    for _ in range(20):
        rec.observe("f", True)
    assert rec.confidence("f") >= 0.8
    assert rec.observe("f", False) is None and rec.observe("f", False) is not None


probs = st.floats(0, 1)
readings = st.lists(st.booleans(), max_size=40)


@settings(max_examples=300)
@given(st.floats(0, 0.5), readings)
def test_belief_stays_a_distribution(p, rs):
    b = run(two_state_model(p), rs)
    assert abs(sum(b.belief) - 1.0) <= 1e-12
    assert all(x >= 0 for x in b.belief)


@settings(max_examples=300)
@given(st.floats(0, 0.5), readings, st.floats(0, 0.49), st.floats(0.5, 1))
def test_out_of_range_never_raises_confidence(p, rs, out_ok, out_failed):
    model = two_state_model(p, out_ok, out_failed)
    b = run(model, rs)
    after = observe(model, b, False)
    if not after.degenerate:
        assert confidence(after) <= confidence(b) + 1e-12


@settings(max_examples=200)
@given(st.floats(0, 1), st.integers(0, 300))
def test_reachability_closed_form_and_monotone(p, k):
    model = two_state_model(p)
    r = reachability(model, k)
    assert abs(r - (1 - (1 - p) ** k)) <= 1e-12
    assert reachability(model, k + 1) >= r - 1e-15


@settings(max_examples=200)
@given(st.lists(probs, min_size=2, max_size=2), st.floats(0, 1))
def test_decide_pointwise(b, threshold):
    total = sum(b)
    if total == 0:
        return
    belief = DtmcBelief("c", (b[0] / total, b[1] / total))
    assert (decide(belief, threshold) is not None) == (confidence(belief) < threshold)
