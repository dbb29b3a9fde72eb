"""Versioned, timestamped storage of twin models.

Layout of a store directory::

    blobs/<sha256>.json   canonical model documents, addressed by content hash
    snapshots.jsonl       append-only commit log: id, parent, ts, message
    index.jsonl           append-only IO-node updates: ts, component, node,
                          value, snapshot (the snapshot the update applies to)

IO-node updates are delta records; every ``snapshot_every`` updates the
working model is committed as a full snapshot.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterator
from urllib.parse import unquote, urlparse

from .blockdiagram import BlockDiagram, DiagramError
from .document import dumps, loads
from .dtmc import DtmcModel, InvalidModel
from .query import ParseError, eval_query
from .reliability import ReliabilityError, ReliabilityTable, load_requirements
from .sdtm import DanglingReference, DigitalTwinPackage, ExternalReference, Scalar, set_node_value
from .timeutil import parse_rfc3339, to_rfc3339, utc
from .validation import ValidationFailed, validate


class StorageError(RuntimeError):
    pass


class UnknownSnapshot(LookupError):
    pass


class UnknownComponent(LookupError):
    pass


class UnknownNode(LookupError):
    pass


class NothingBefore(LookupError):
    pass


@dataclass(frozen=True)
class Snapshot:
    snapshot_id: str
    parent_id: str | None
    timestamp: datetime
    message: str

    def to_json(self) -> str:
        return json.dumps({"id": self.snapshot_id, "parent": self.parent_id,
                           "ts": to_rfc3339(self.timestamp), "message": self.message}, sort_keys=True)


@dataclass(frozen=True)
class TimeSeries:
    component_id: str
    io_node: str
    samples: tuple[tuple[datetime, Scalar], ...] = ()

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def values(self) -> list[Scalar]:
        return [v for _, v in self.samples]

    @property
    def timestamps(self) -> list[datetime]:
        return [t for t, _ in self.samples]


@dataclass(frozen=True)
class Delta:
    timestamp: datetime
    component_id: str
    node: str
    value: Scalar
    snapshot_id: str | None

    def to_json(self) -> str:
        return json.dumps({"ts": to_rfc3339(self.timestamp), "component": self.component_id, "node": self.node,
                           "value": self.value, "snapshot": self.snapshot_id}, sort_keys=True)


def content_id(pkg: DigitalTwinPackage) -> str:
    return hashlib.sha256(dumps(pkg).encode("utf-8")).hexdigest()


class _Series:
    __slots__ = ("times", "values")

    def __init__(self):
        self.times: list[datetime] = []
        self.values: list[Scalar] = []


class TwinStore:
    """Content-addressed snapshots plus per-node time series.

    One writer at a time (an internal lock serialises commits and updates);
    snapshots are immutable once written.
    """

    def __init__(self, root: str | Path, snapshot_every: int = 100):
        if snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        self.root = Path(root)
        self.snapshot_every = snapshot_every
        self._lock = threading.RLock()
        self._log: list[Snapshot] = []
        self._series: dict[tuple[str, str], _Series] = {}
        self._deltas_since_snapshot: list[Delta] = []
        self._working: DigitalTwinPackage | None = None
        try:
            (self.root / "blobs").mkdir(parents=True, exist_ok=True)
            self._load()
            self._snap_fh = open(self.root / "snapshots.jsonl", "a", encoding="utf-8")
            self._index_fh = open(self.root / "index.jsonl", "a", encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot open store at {self.root}: {exc}") from exc

    # -- persistence ---------------------------------------------------------

    def _load(self) -> None:
        snaps = self.root / "snapshots.jsonl"
        if snaps.exists():
            for line in snaps.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    r = json.loads(line)
                    self._log.append(Snapshot(r["id"], r["parent"], parse_rfc3339(r["ts"]), r["message"]))
        if self._log:
            self._working = self.checkout(self._log[-1].snapshot_id)
        index = self.root / "index.jsonl"
        if index.exists():
            head = self.head
            for line in index.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                r = json.loads(line)
                d = Delta(parse_rfc3339(r["ts"]), r["component"], r["node"], r["value"], r["snapshot"])
                self._append_series(d)
                if d.snapshot_id == head:
                    self._deltas_since_snapshot.append(d)
            for d in self._deltas_since_snapshot:
                self._working = set_node_value(self._working, d.component_id, d.node, d.value, d.timestamp)

    def _blob_path(self, snapshot_id: str) -> Path:
        return self.root / "blobs" / f"{snapshot_id}.json"

    def close(self) -> None:
        with self._lock:
            for fh in (self._snap_fh, self._index_fh):
                if not fh.closed:
                    fh.flush()
                    os.fsync(fh.fileno())
                    fh.close()

    def __enter__(self) -> "TwinStore":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    # -- snapshots -----------------------------------------------------------

    @property
    def head(self) -> str | None:
        return self._log[-1].snapshot_id if self._log else None

    @property
    def working(self) -> DigitalTwinPackage | None:
        """Latest model including IO-node updates not yet snapshotted."""
        return self._working

    def log(self) -> list[Snapshot]:
        return list(self._log)

    def commit(self, pkg: DigitalTwinPackage, timestamp: datetime, message: str = "") -> str:
        """Persist ``pkg`` as a snapshot; re-committing the head content is a no-op."""
        violations = validate(pkg)
        if violations:
            raise ValidationFailed(violations)
        return self._commit(pkg, timestamp, message)

    def _commit(self, pkg: DigitalTwinPackage, timestamp: datetime, message: str) -> str:
        ts = utc(timestamp)
        text = dumps(pkg)
        sid = hashlib.sha256(text.encode("utf-8")).hexdigest()
        with self._lock:
            if sid == self.head:
                return sid
            if self._log and ts < self._log[-1].timestamp:
                raise StorageError("commit timestamps must not go backwards")
            blob = self._blob_path(sid)
            try:
                if not blob.exists():
                    tmp = blob.with_suffix(".tmp")
                    tmp.write_text(text, encoding="utf-8")
                    os.replace(tmp, blob)
                snap = Snapshot(sid, self.head, ts, message)
                self._snap_fh.write(snap.to_json() + "\n")
                self._snap_fh.flush()
            except OSError as exc:
                raise StorageError(str(exc)) from exc
            self._log.append(snap)
            self._working = pkg
            self._deltas_since_snapshot = []
            return sid

    def checkout(self, snapshot_id: str) -> DigitalTwinPackage:
        blob = self._blob_path(snapshot_id)
        if not blob.exists():
            raise UnknownSnapshot(snapshot_id)
        return loads(blob.read_bytes())

    def snapshot_at(self, timestamp: datetime) -> str:
        """Id of the latest snapshot committed at or before ``timestamp``."""
        ts = utc(timestamp)
        times = [s.timestamp for s in self._log]
        k = bisect.bisect_right(times, ts)
        if k == 0:
            raise NothingBefore(to_rfc3339(ts))
        return self._log[k - 1].snapshot_id

    def model_at(self, timestamp: datetime) -> DigitalTwinPackage:
        """Snapshot at ``timestamp`` with the IO updates recorded up to then replayed."""
        ts = utc(timestamp)
        sid = self.snapshot_at(ts)
        pkg = self.checkout(sid)
        for d in self._iter_deltas():
            if d.snapshot_id == sid and d.timestamp <= ts:
                pkg = set_node_value(pkg, d.component_id, d.node, d.value, d.timestamp)
        return pkg

    def _iter_deltas(self) -> Iterator[Delta]:
        index = self.root / "index.jsonl"
        with self._lock:
            self._index_fh.flush()
        if not index.exists():
            return
        with open(index, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    r = json.loads(line)
                    yield Delta(parse_rfc3339(r["ts"]), r["component"], r["node"], r["value"], r["snapshot"])

    # -- IO-node updates -----------------------------------------------------

    def _append_series(self, d: Delta) -> None:
        s = self._series.setdefault((d.component_id, d.node), _Series())
        s.times.append(d.timestamp)
        s.values.append(d.value)

    def record(self, component_id: str, node: str, value: Scalar, timestamp: datetime) -> None:
        """Apply one IO-node value to the working model and log it as a delta."""
        ts = utc(timestamp)
        with self._lock:
            if self._working is None:
                raise StorageError("store has no committed model")
            try:
                comp = self._working.component(component_id)
            except DanglingReference:
                raise UnknownComponent(component_id) from None
            if comp.node(node) is None:
                raise UnknownNode(f"{component_id}.{node}")
            series = self._series.get((component_id, node))
            if series is not None and series.times and ts <= series.times[-1]:
                raise StorageError(f"{component_id}.{node}: timestamps must increase")
            self._working = set_node_value(self._working, component_id, node, value, ts)
            d = Delta(ts, component_id, node, value, self.head)
            try:
                self._index_fh.write(d.to_json() + "\n")
                self._index_fh.flush()
            except OSError as exc:
                raise StorageError(str(exc)) from exc
            self._append_series(d)
            self._deltas_since_snapshot.append(d)
            if len(self._deltas_since_snapshot) >= self.snapshot_every:
                # series interleave, so stamp with the newest absorbed update
                latest = max(x.timestamp for x in self._deltas_since_snapshot)
                if self._log:
                    latest = max(latest, self._log[-1].timestamp)
                self._commit(self._working, latest, f"{len(self._deltas_since_snapshot)} IO updates")

    def query_timeseries(self, component_id: str, io_node: str, t0: datetime, t1: datetime) -> TimeSeries:
        """Every recorded value of the node with ``t0 <= ts <= t1``, in time order."""
        t0, t1 = utc(t0), utc(t1)
        if t0 > t1:
            raise ValueError("t0 must not be after t1")
        series = self._series.get((component_id, io_node))
        if series is None:
            known = self._working is not None and any(c.id == component_id for c in self._working.all_components())
            if not known:
                raise UnknownComponent(component_id)
            return TimeSeries(component_id, io_node)
        with self._lock:
            lo = bisect.bisect_left(series.times, t0)
            hi = bisect.bisect_right(series.times, t1)
            samples = tuple(zip(series.times[lo:hi], series.values[lo:hi]))
        return TimeSeries(component_id, io_node, samples)


# -- external references -------------------------------------------------------

class MissingDocument(FileNotFoundError):
    pass


class UnsupportedModelType(ValueError):
    pass


class DocumentParseError(ParseError):
    """An external document could not be read as its declared model type."""


def _requirements_doc(path: Path) -> tuple[Any, Any]:
    reqs = load_requirements(path)
    data = {"requirements": [{"target": r.target_id, "threshold": r.threshold, "metric": r.metric} for r in reqs]}
    return reqs, data


def _table_doc(path: Path) -> tuple[Any, Any]:
    table = ReliabilityTable.load(path)
    return table, table.to_document()


def _diagram_doc(path: Path) -> tuple[Any, Any]:
    d = BlockDiagram.load(path)
    return d, d.to_dict()


def _dtmc_doc(path: Path) -> tuple[Any, Any]:
    m = DtmcModel.load(path)
    return m, m.to_dict()


LOADERS: dict[str, Callable[[Path], tuple[Any, Any]]] = {
    "reliability-table": _table_doc,
    "block-diagram": _diagram_doc,
    "requirements": _requirements_doc,
    "dtmc": _dtmc_doc,
}


@dataclass(frozen=True)
class ResolvedReference:
    reference: ExternalReference
    path: Path
    document: Any
    data: Any
    constraint_result: Any = None


def locate(location: str, base_dir: str | Path) -> Path:
    """Relative locations must stay inside ``base_dir``; ``file:`` URIs and
    absolute paths name a local file directly."""
    url = urlparse(location)
    if url.scheme == "file":
        return Path(unquote(url.path))
    if url.scheme and len(url.scheme) > 1:
        raise MissingDocument(f"{location}: only local files are supported")
    path = Path(location)
    if path.is_absolute():
        return path
    base = Path(base_dir).resolve()
    full = (base / path).resolve()
    if full != base and base not in full.parents:
        raise MissingDocument(f"{location} escapes {base}")
    return full


def resolve_external(ref: ExternalReference, base_dir: str | Path) -> ResolvedReference:
    loader = LOADERS.get(ref.model_type)
    if loader is None:
        raise UnsupportedModelType(ref.model_type)
    path = locate(ref.location, base_dir)
    if not path.is_file():
        raise MissingDocument(str(path))
    try:
        document, data = loader(path)
    except (json.JSONDecodeError, UnicodeDecodeError, ReliabilityError, DiagramError, InvalidModel) as exc:
        raise DocumentParseError(f"{path}: {exc}") from None
    result = eval_query(ref.constraint, data) if ref.constraint else None
    return ResolvedReference(ref, path, document, data, result)
