import json
import threading
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from eetwin.casestudy import data_path
from eetwin.query import ParseError
from eetwin.sdtm import ExternalReference, replace_component
from eetwin.store import (
    MissingDocument,
    NothingBefore,
    StorageError,
    TwinStore,
    UnknownComponent,
    UnknownNode,
    UnknownSnapshot,
    UnsupportedModelType,
    content_id,
    resolve_external,
)
from eetwin.validation import ValidationFailed
from mutations import MUTATIONS

T0 = datetime(2025, 3, 1, 12, 0, tzinfo=timezone.utc)


def at(seconds: float) -> datetime:
    return T0 + timedelta(seconds=seconds)


@pytest.fixture
def store(tmp_path, case_study):
    s = TwinStore(tmp_path / "store")
    s.commit(case_study, T0, "initial")
    yield s
    s.close()


def test_commit_is_content_addressed(store, case_study):
    sid = store.head
    assert sid == content_id(case_study)
    assert store.commit(case_study, at(1)) == sid
    assert len(store.log()) == 1


def test_commit_chain(store, case_study):
    first = store.head
    changed = replace_component(case_study, "motor", fit=121.0)
    second = store.commit(changed, at(1), "fit")
    assert second != first
    assert store.log()[-1].parent_id == first
    assert store.checkout(first) == case_study and store.checkout(second) == changed


def test_commit_invalid_rejected(store, case_study):
    with pytest.raises(ValidationFailed) as exc:
        store.commit(MUTATIONS["sil-range"](case_study), at(1))
    assert [v.rule for v in exc.value.violations] == ["sil-range"]
    assert len(store.log()) == 1


def test_commit_backwards_in_time(store, case_study):
    with pytest.raises(StorageError):
        store.commit(replace_component(case_study, "motor", fit=1.0), T0 - timedelta(seconds=1))


def test_unknown_snapshot(store):
    with pytest.raises(UnknownSnapshot):
        store.checkout("0" * 64)


def test_oldest_snapshot_after_100_commits(store, case_study):
    first = store.head
    for k in range(100):
        store.commit(replace_component(case_study, "motor", fit=200.0 + k), at(k + 1))
    assert len(store.log()) == 101
    assert store.checkout(first) == case_study
    assert store.checkout(store.log()[50].snapshot_id).component("motor").fit == 249.0


def test_snapshot_at(store, case_study):
    s1 = store.head
    s2 = store.commit(replace_component(case_study, "motor", fit=1.0), at(10))
    s3 = store.commit(replace_component(case_study, "motor", fit=2.0), at(20))
    assert store.snapshot_at(T0) == s1
    assert store.snapshot_at(at(10)) == s2
    assert store.snapshot_at(at(15)) == s2
    assert store.snapshot_at(at(99)) == s3
    with pytest.raises(NothingBefore):
        store.snapshot_at(at(-1))


def test_timeseries_examples(store):
    for t, v in ((1, 10), (2, 12), (3, 11)):
        store.record("filter", "filtered", v, at(t))
    series = store.query_timeseries("filter", "filtered", at(1), at(2))
    assert series.samples == ((at(1), 10), (at(2), 12))
    assert len(store.query_timeseries("filter", "filtered", at(5), at(9))) == 0
    assert len(store.query_timeseries("motor", "speed", at(0), at(9))) == 0
    with pytest.raises(UnknownComponent):
        store.query_timeseries("ghost", "x", at(0), at(1))
    with pytest.raises(ValueError):
        store.query_timeseries("filter", "filtered", at(2), at(1))


def test_record_errors(store):
    with pytest.raises(UnknownComponent):
        store.record("ghost", "x", 1.0, at(1))
    with pytest.raises(UnknownNode):
        store.record("filter", "nope", 1.0, at(1))
    store.record("filter", "filtered", 1.0, at(1))
    with pytest.raises(StorageError):
        store.record("filter", "filtered", 2.0, at(1))
    assert store.query_timeseries("filter", "filtered", at(0), at(9)).values == [1.0]


def test_record_on_empty_store(tmp_path):
    with TwinStore(tmp_path / "s") as s:
        with pytest.raises(StorageError):
            s.record("filter", "filtered", 1.0, T0)


def test_auto_snapshot_and_model_at(tmp_path, case_study):
    with TwinStore(tmp_path / "s", snapshot_every=10) as s:
        s.commit(case_study, T0)
        for k in range(25):
            s.record("motor", "speed", float(k), at(k + 1))
        assert len(s.log()) == 3
        assert s.working.component("motor").node("speed").value == 24.0
        assert s.model_at(at(5)).component("motor").node("speed").value == 4.0
        assert s.model_at(at(12.5)).component("motor").node("speed").value == 11.0
        assert s.model_at(at(0.5)).component("motor").node("speed").value is None


def test_reopen_replays_everything(tmp_path, case_study):
    root = tmp_path / "s"
    with TwinStore(root, snapshot_every=7) as s:
        s.commit(case_study, T0)
        for k in range(20):
            s.record("filter", "filtered", k * 0.5, at(k + 1))
        log, working = s.log(), s.working
    with TwinStore(root, snapshot_every=7) as again:
        assert again.log() == log
        assert again.working == working
        assert again.query_timeseries("filter", "filtered", T0, at(100)).values == [k * 0.5 for k in range(20)]
        again.record("filter", "filtered", 99.0, at(30))
    for line in (root / "snapshots.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert (root / "blobs" / f"{rec['id']}.json").exists()


def test_history_is_immutable(store, case_study):
    first = store.head
    blob = (store.root / "blobs" / f"{first}.json").read_bytes()
    store.commit(replace_component(case_study, "pid", fit=1.0), at(1))
    store.record("motor", "speed", 1.0, at(2))
    assert (store.root / "blobs" / f"{first}.json").read_bytes() == blob
    assert store.checkout(first) == case_study


def test_concurrent_writers_serialise(store):
    def writer(node, comp):
        for k in range(200):
            store.record(comp, node, float(k), at(k + 1))

    threads = [threading.Thread(target=writer, args=("filtered", "filter")),
               threading.Thread(target=writer, args=("speed", "motor"))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.query_timeseries("filter", "filtered", T0, at(999)).values == [float(k) for k in range(200)]
    assert store.query_timeseries("motor", "speed", T0, at(999)).values == [float(k) for k in range(200)]


@settings(max_examples=30, deadline=None, suppress_health_check=list(HealthCheck))
@given(st.lists(st.integers(1, 10_000), unique=True, min_size=1, max_size=60), st.integers(0, 10_000),
       st.integers(0, 10_000))
def test_query_returns_exactly_the_window(tmp_path_factory, case_study, offsets, a, b):
    lo, hi = sorted((a, b))
    offsets = sorted(offsets)
    with TwinStore(tmp_path_factory.mktemp("s"), snapshot_every=13) as s:
        s.commit(case_study, T0)
        for k in offsets:
            s.record("motor", "current", float(k), at(k / 1000))
        got = s.query_timeseries("motor", "current", at(lo / 1000), at(hi / 1000)).values
    assert got == [float(k) for k in offsets if lo <= k <= hi]


# -- external references ---------------------------------------------------------

def test_resolve_reliability_table_with_constraint():
    ref = ExternalReference(location="reliability.csv", model_type="reliability-table", constraint="count(rows) > 0")
    res = resolve_external(ref, data_path("."))
    assert res.constraint_result is True
    assert "HBridge" in res.document.rows


def test_resolve_case_study_references(case_study):
    for ref in case_study.external_references:
        res = resolve_external(ref, data_path("."))
        assert res.constraint_result in (None, True)


def test_resolve_other_types():
    assert resolve_external(ExternalReference(location="dtmc.json", model_type="dtmc"),
                            data_path(".")).document.states == ("OK", "Failed")
    diag = resolve_external(ExternalReference(location="motor_control.diagram.json", model_type="block-diagram",
                                              constraint="count(blocks) = 5"), data_path("."))
    assert diag.constraint_result is True


def test_resolve_absolute_and_file_uri(tmp_path):
    p = tmp_path / "r.json"
    p.write_text('{"requirements": [{"target": "x", "threshold": 0.5}]}')
    for loc in (str(p), p.as_uri()):
        res = resolve_external(ExternalReference(location=loc, model_type="requirements",
                                                 constraint="requirements[0].threshold = 0.5"), "/nonexistent")
        assert res.constraint_result is True


def test_resolve_errors(tmp_path):
    with pytest.raises(MissingDocument):
        resolve_external(ExternalReference(location="absent.csv", model_type="reliability-table"), tmp_path)
    with pytest.raises(MissingDocument):
        resolve_external(ExternalReference(location="../escape.csv", model_type="reliability-table"), tmp_path)
    with pytest.raises(UnsupportedModelType):
        resolve_external(ExternalReference(location="x.step", model_type="geometry"), tmp_path)
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ParseError):
        resolve_external(ExternalReference(location="bad.json", model_type="dtmc"), tmp_path)
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(ParseError):
        resolve_external(ExternalReference(location="empty.csv", model_type="reliability-table"), tmp_path)
