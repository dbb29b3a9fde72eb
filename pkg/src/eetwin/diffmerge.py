"""Model comparison and three-way merging.

Both work on a flat view of a package: one record per element id holding
its own fields, with nested element lists replaced by the list of child
ids. Reordering or adding children therefore shows up as a modification of
the parent's id list.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any

from pydantic.alias_generators import to_camel

from .sdtm import DigitalTwinPackage, ModelElement, child_slots
from .validation import Violation, validate


class _Missing:
    def __repr__(self) -> str:
        return "MISSING"


MISSING: Any = _Missing()


class ApplyError(ValueError):
    pass


@dataclass(frozen=True)
class Flat:
    root: str
    entries: dict[str, dict[str, Any]]
    child_fields: dict[str, frozenset[str]]


def flatten(pkg: DigitalTwinPackage) -> Flat:
    entries: dict[str, dict[str, Any]] = {}
    child_fields: dict[str, frozenset[str]] = {}

    def visit(el: ModelElement) -> None:
        slots = child_slots(type(el))
        rec = el.model_dump(mode="json", by_alias=True, exclude=set(slots))
        for slot in slots:
            children = getattr(el, slot)
            rec[to_camel(slot)] = [c.id for c in children]
            for c in children:
                visit(c)
        entries[el.id] = rec
        child_fields[el.id] = frozenset(to_camel(s) for s in slots)

    visit(pkg)
    return Flat(pkg.id, entries, child_fields)


def _expand(root: str, entries: dict[str, dict[str, Any]], child_fields: dict[str, frozenset[str]]) -> dict:
    seen: set[str] = set()

    def build(eid: str) -> dict:
        if eid in seen:
            raise ApplyError(f"element {eid!r} appears more than once")
        seen.add(eid)
        rec = dict(entries[eid])
        for key in child_fields.get(eid, ()):
            if key in rec:
                rec[key] = [build(cid) for cid in rec[key]]
        return rec

    return build(root)


def _child_fields_of(entries: dict[str, dict[str, Any]], root: str) -> dict[str, frozenset[str]]:
    """Recover which fields hold child ids by walking the type tree from the root."""
    out: dict[str, frozenset[str]] = {}

    def walk(eid: str, cls: type[ModelElement]) -> None:
        slots = child_slots(cls)
        out[eid] = frozenset(to_camel(s) for s in slots)
        rec = entries.get(eid, {})
        for slot, child_cls in slots.items():
            for cid in rec.get(to_camel(slot), ()):
                if cid in entries and cid not in out:
                    walk(cid, child_cls)

    walk(root, DigitalTwinPackage)
    return out


def unflatten(root: str, entries: dict[str, dict[str, Any]]) -> DigitalTwinPackage:
    try:
        doc = _expand(root, entries, _child_fields_of(entries, root))
    except KeyError as exc:
        raise ApplyError(f"unknown element {exc.args[0]!r}") from None
    return DigitalTwinPackage.model_validate(doc)


def _same(a: Any, b: Any) -> bool:
    if a is MISSING or b is MISSING:
        return a is b
    return json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


@dataclass(frozen=True)
class Modification:
    element_id: str
    field: str
    old: Any
    new: Any


@dataclass(frozen=True)
class ChangeSet:
    added: dict[str, dict[str, Any]] = field(default_factory=dict)
    removed: tuple[str, ...] = ()
    modified: tuple[Modification, ...] = ()
    root: str | None = None

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.modified or self.root)

    def to_dict(self) -> dict[str, Any]:
        def enc(v: Any) -> Any:
            return {"$missing": True} if v is MISSING else v

        return {
            "added": self.added,
            "removed": list(self.removed),
            "modified": [{"id": m.element_id, "field": m.field, "old": enc(m.old), "new": enc(m.new)}
                         for m in self.modified],
            "root": self.root,
        }


def diff(a: DigitalTwinPackage, b: DigitalTwinPackage) -> ChangeSet:
    fa, fb = flatten(a), flatten(b)
    added = {i: copy.deepcopy(rec) for i, rec in fb.entries.items() if i not in fa.entries}
    removed = tuple(i for i in fa.entries if i not in fb.entries)
    modified = []
    for i, ra in fa.entries.items():
        rb = fb.entries.get(i)
        if rb is None:
            continue
        for key in sorted(set(ra) | set(rb)):
            old, new = ra.get(key, MISSING), rb.get(key, MISSING)
            if not _same(old, new):
                modified.append(Modification(i, key, copy.deepcopy(old), copy.deepcopy(new)))
    return ChangeSet(added, removed, tuple(modified), fb.root if fb.root != fa.root else None)


def apply(a: DigitalTwinPackage, changes: ChangeSet) -> DigitalTwinPackage:
    """Apply ``changes`` to ``a``; raises ApplyError when ``a`` does not match the recorded old values."""
    flat = flatten(a)
    entries = {i: dict(rec) for i, rec in flat.entries.items()}
    for i in changes.removed:
        if entries.pop(i, None) is None:
            raise ApplyError(f"cannot remove unknown element {i!r}")
    for i, rec in changes.added.items():
        if i in entries:
            raise ApplyError(f"element {i!r} already exists")
        entries[i] = copy.deepcopy(rec)
    for m in changes.modified:
        rec = entries.get(m.element_id)
        if rec is None:
            raise ApplyError(f"cannot modify unknown element {m.element_id!r}")
        if not _same(rec.get(m.field, MISSING), m.old):
            raise ApplyError(f"{m.element_id}.{m.field} does not hold the expected old value")
        if m.new is MISSING:
            rec.pop(m.field, None)
        else:
            rec[m.field] = copy.deepcopy(m.new)
    return unflatten(changes.root or flat.root, entries)


# -- merging ------------------------------------------------------------------

@dataclass(frozen=True)
class Conflict:
    element_id: str
    field: str
    a_value: Any
    b_value: Any


@dataclass(frozen=True)
class ConflictReport:
    conflicts: tuple[Conflict, ...] = ()
    violations: tuple[Violation, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.conflicts or self.violations)


class _ListConflict(Exception):
    pass


def merge_id_lists(base: list[str], a: list[str], b: list[str]) -> list[str]:
    """Three-way merge of ordered id lists.

    Removals from either side are honoured. Additions are placed after the
    nearest surviving predecessor on their own side; runs added by both
    sides at the same spot are ordered by content so the result does not
    depend on argument order. Conflicting reorders raise _ListConflict.
    """
    base_set = set(base)
    removed = (base_set - set(a)) | (base_set - set(b))
    survivors = [x for x in base if x not in removed]
    sa = [x for x in a if x in base_set and x not in removed]
    sb = [x for x in b if x in base_set and x not in removed]
    if sa == survivors:
        order = sb
    elif sb == survivors or sa == sb:
        order = sa
    else:
        raise _ListConflict
    keep = set(order)

    runs: dict[str | None, list[tuple[str, ...]]] = {}
    for side in (a, b):
        anchor: str | None = None
        run: list[str] = []
        for x in side:
            if x in keep:
                if run:
                    runs.setdefault(anchor, []).append(tuple(run))
                    run = []
                anchor = x
            elif x not in base_set:
                run.append(x)
        if run:
            runs.setdefault(anchor, []).append(tuple(run))

    out: list[str] = []
    placed: set[str] = set()

    def emit(anchor: str | None) -> None:
        for r in sorted(runs.get(anchor, [])):
            for x in r:
                if x not in placed:
                    placed.add(x)
                    out.append(x)

    emit(None)
    for x in order:
        out.append(x)
        placed.add(x)
        emit(x)
    return out


def merge(
    a: DigitalTwinPackage, b: DigitalTwinPackage, base: DigitalTwinPackage
) -> DigitalTwinPackage | ConflictReport:
    """Three-way merge of ``a`` and ``b``, both derived from ``base``.

    Returns the merged package, or a ConflictReport listing same-field
    edits with different values (or the violations of the merged model).
    """
    f0, fa, fb = flatten(base), flatten(a), flatten(b)
    conflicts: list[Conflict] = []
    result: dict[str, dict[str, Any]] = {}
    child_keys: dict[str, frozenset[str]] = {**f0.child_fields, **fa.child_fields, **fb.child_fields}

    ids = list(dict.fromkeys([*f0.entries, *fa.entries, *fb.entries]))
    for i in ids:
        r0, ra, rb = f0.entries.get(i), fa.entries.get(i), fb.entries.get(i)
        if ra is None and rb is None:
            continue
        if r0 is not None and (ra is None or rb is None):
            kept = ra if ra is not None else rb
            if not _same(kept, r0):
                conflicts.append(Conflict(i, "*", MISSING if ra is None else ra, MISSING if rb is None else rb))
            continue
        if ra is None or rb is None:
            result[i] = copy.deepcopy(ra if ra is not None else rb)
            continue
        merged: dict[str, Any] = {}
        base_rec = r0 or {}
        for key in sorted(set(base_rec) | set(ra) | set(rb)):
            v0, va, vb = base_rec.get(key, MISSING), ra.get(key, MISSING), rb.get(key, MISSING)
            if _same(va, vb):
                v = va
            elif _same(va, v0):
                v = vb
            elif _same(vb, v0):
                v = va
            elif key in child_keys.get(i, ()) and all(isinstance(x, list) for x in (va, vb)):
                try:
                    v = merge_id_lists(v0 if isinstance(v0, list) else [], va, vb)
                except _ListConflict:
                    conflicts.append(Conflict(i, key, va, vb))
                    continue
            else:
                conflicts.append(Conflict(i, key, va, vb))
                continue
            if v is not MISSING:
                merged[key] = copy.deepcopy(v)
        result[i] = merged

    if fa.root != fb.root:
        conflicts.append(Conflict(fa.root, "<root>", fa.root, fb.root))
    if conflicts:
        return ConflictReport(tuple(conflicts))

    root = fa.root
    referenced: dict[str, str] = {}
    for pid, rec in result.items():
        for key in child_keys.get(pid, ()):
            kept = []
            for cid in rec.get(key, []):
                if cid not in result:
                    continue
                if cid in referenced:
                    conflicts.append(Conflict(cid, "<parent>", referenced[cid], pid))
                    continue
                referenced[cid] = pid
                kept.append(cid)
            if key in rec:
                rec[key] = kept
    for i in result:
        if i != root and i not in referenced:
            conflicts.append(Conflict(i, "<parent>", MISSING, MISSING))
    if conflicts:
        return ConflictReport(tuple(conflicts))

    pkg = unflatten(root, result)
    violations = validate(pkg)
    if violations:
        return ConflictReport(violations=tuple(violations))
    return pkg
