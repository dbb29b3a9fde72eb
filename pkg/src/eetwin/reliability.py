"""Automated FMEA and the single point failure metric (SPFM).

Failure modes come from a reliability table keyed by component type, or
from failure modes modelled inline on a component. A mode is hazardous when
its effect reaches a hazard-sink component: by graph closure over failure
effects and relationships, or by running the plant simulator with the
mode's fault mapping injected.

    SPFM = 1 - (sum lambda_SPF + sum lambda_RF) / sum lambda_SR

with all rates in FIT and the sums taken over safety-related components.
"""

from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .plant import Criterion, PlantConfig, classify_trajectory, inject_fault, run
from .sdtm import Component, DigitalTwinPackage, FailureMode, SafetyMechanism

SAFE = "safe"
DETECTED = "detected"
RESIDUAL = "residual"
SINGLE_POINT = "singlePoint"


class ReliabilityError(ValueError):
    pass


class UnknownMode(ReliabilityError, LookupError):
    pass


class MissingReliabilityData(ReliabilityError):
    pass


class UnmappedComponent(ReliabilityError, LookupError):
    pass


class UnknownTarget(ReliabilityError, LookupError):
    pass


# -- reliability table --------------------------------------------------------

FaultValue = float | bool


@dataclass(frozen=True)
class ModeSpec:
    name: str
    fraction: float
    fault_mapping: Mapping[str, FaultValue] = field(default_factory=dict)


@dataclass(frozen=True)
class TableRow:
    component_type: str
    lambda_fit: float
    modes: tuple[ModeSpec, ...] = ()


def parse_fault_mapping(text: str) -> dict[str, FaultValue]:
    """Parse ``key=value;key=value``; ``true``/``false`` become booleans."""
    out: dict[str, FaultValue] = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, sep, value = part.partition("=")
        if not sep or not key.strip():
            raise ReliabilityError(f"bad fault mapping item {part!r}")
        v = value.strip().lower()
        out[key.strip()] = v == "true" if v in ("true", "false") else float(value)
    return out


def format_fault_mapping(mapping: Mapping[str, FaultValue]) -> str:
    return ";".join(f"{k}={str(v).lower() if isinstance(v, bool) else repr(float(v))}" for k, v in mapping.items())


@dataclass(frozen=True)
class ReliabilityTable:
    rows: Mapping[str, TableRow] = field(default_factory=dict)

    def __post_init__(self):
        for row in self.rows.values():
            if not row.lambda_fit >= 0:
                raise ReliabilityError(f"{row.component_type}: lambdaFit must be non-negative")
            total = sum(m.fraction for m in row.modes)
            if total > 1.0 + 1e-9 or any(not 0.0 <= m.fraction <= 1.0 for m in row.modes):
                raise ReliabilityError(f"{row.component_type}: mode fractions must lie in [0, 1] and sum to <= 1")

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]]) -> "ReliabilityTable":
        rows: dict[str, TableRow] = {}
        for rec in records:
            try:
                ctype = str(rec["componentType"]).strip()
                lam = float(rec["lambdaFit"])
                mode_name = str(rec.get("modeName") or "").strip()
                mapping = rec.get("faultMapping") or {}
                if isinstance(mapping, str):
                    mapping = parse_fault_mapping(mapping)
                fraction = float(rec.get("fraction") or 0.0)
            except (KeyError, ValueError, TypeError) as exc:
                raise ReliabilityError(f"bad reliability record {dict(rec)!r}: {exc}") from None
            row = rows.get(ctype)
            if row is not None and row.lambda_fit != lam:
                raise ReliabilityError(f"{ctype}: conflicting lambdaFit values")
            modes = row.modes if row else ()
            if mode_name:
                modes = modes + (ModeSpec(mode_name, fraction, dict(mapping)),)
            rows[ctype] = TableRow(ctype, lam, modes)
        return cls(rows)

    @classmethod
    def from_csv(cls, text: str, delimiter: str | None = None) -> "ReliabilityTable":
        if not text.strip():
            raise ReliabilityError("reliability table is empty")
        if delimiter is None:
            delimiter = "\t" if "\t" in text.splitlines()[0] else ","
        return cls.from_records(csv.DictReader(io.StringIO(text), delimiter=delimiter))

    @classmethod
    def from_json(cls, data: Any) -> "ReliabilityTable":
        rows = data.get("rows", []) if isinstance(data, dict) else data
        records = []
        for row in rows:
            modes = row.get("modes")
            if modes is None:
                records.append(row)
                continue
            if not modes:
                records.append({"componentType": row["componentType"], "lambdaFit": row["lambdaFit"]})
            for m in modes:
                records.append({"componentType": row["componentType"], "lambdaFit": row["lambdaFit"],
                                "modeName": m["modeName"], "fraction": m["fraction"],
                                "faultMapping": m.get("faultMapping", {})})
        return cls.from_records(records)

    @classmethod
    def load(cls, path: str | Path) -> "ReliabilityTable":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".json":
            try:
                return cls.from_json(json.loads(text))
            except json.JSONDecodeError as exc:
                raise ReliabilityError(f"malformed reliability table: {exc}") from None
        return cls.from_csv(text, "\t" if path.suffix.lower() == ".tsv" else None)

    def to_document(self) -> dict[str, Any]:
        return {"rows": [
            {"componentType": r.component_type, "lambdaFit": r.lambda_fit,
             "modes": [{"modeName": m.name, "fraction": m.fraction, "faultMapping": dict(m.fault_mapping)}
                       for m in r.modes]}
            for r in self.rows.values()
        ]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["componentType", "lambdaFit", "modeName", "fraction", "faultMapping"])
        for r in self.rows.values():
            for m in r.modes or (None,):
                if m is None:
                    w.writerow([r.component_type, repr(r.lambda_fit), "", "", ""])
                else:
                    w.writerow([r.component_type, repr(r.lambda_fit), m.name, repr(m.fraction),
                                format_fault_mapping(m.fault_mapping)])
        return buf.getvalue()


# -- failure data per component -----------------------------------------------

@dataclass(frozen=True)
class ResolvedMode:
    name: str
    fraction: float
    fault_mapping: Mapping[str, FaultValue]
    inline: FailureMode | None


def _inline_mode(comp: Component, name: str) -> FailureMode | None:
    for fm in comp.failure_modes:
        if fm.id == name or fm.label == name:
            return fm
    return None


def failure_data(comp: Component, table: ReliabilityTable | None) -> tuple[float, list[ResolvedMode]]:
    """Failure rate (FIT) and failure modes of ``comp``.

    A table row for the component type wins; otherwise the inline failure
    modes and the component FIT are used.
    """
    row = table.rows.get(comp.component_type_term) if table and comp.component_type_term else None
    if row is not None:
        return row.lambda_fit, [ResolvedMode(m.name, m.fraction, m.fault_mapping, _inline_mode(comp, m.name))
                                for m in row.modes]
    if comp.failure_modes:
        return comp.fit, [ResolvedMode(fm.label, fm.fraction, {}, fm) for fm in comp.failure_modes]
    raise MissingReliabilityData(comp.id)


def _coverage(mechanisms: Mapping[str, SafetyMechanism], fm: FailureMode | None) -> float | None:
    """Best diagnostic coverage of the mechanisms covering ``fm``; None if uncovered."""
    if fm is None:
        return None
    covering = [mechanisms[m].diagnostic_coverage for m in fm.covered_by if m in mechanisms]
    return max(covering) if covering else None


def _mechanisms(pkg: DigitalTwinPackage) -> dict[str, SafetyMechanism]:
    return {sm.id: sm for c in pkg.all_components() for sm in c.safety_mechanisms}


# -- effect closure -----------------------------------------------------------

def _downstream(pkg: DigitalTwinPackage) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {}
    for rel in pkg.relationships():
        adj.setdefault(rel.source.component, set()).add(rel.target.component)
    return adj


def _closure(start: Iterable[str], adj: Mapping[str, set[str]]) -> frozenset[str]:
    seen = set(start)
    todo = deque(seen)
    while todo:
        for nxt in adj.get(todo.popleft(), ()):
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return frozenset(seen)


def _find_mode(comp: Component, mode_name: str, table: ReliabilityTable | None) -> ResolvedMode:
    try:
        _, modes = failure_data(comp, table)
    except MissingReliabilityData:
        modes = []
    for m in modes:
        if m.name == mode_name or (m.inline is not None and m.inline.id == mode_name):
            return m
    fm = _inline_mode(comp, mode_name)
    if fm is not None:
        return ResolvedMode(fm.label, fm.fraction, {}, fm)
    raise UnknownMode(f"{comp.id} has no failure mode {mode_name!r}")


def effect_closure(
    pkg: DigitalTwinPackage, component_id: str, mode_name: str, table: ReliabilityTable | None = None
) -> frozenset[str]:
    """Components affected by ``mode_name`` of ``component_id``.

    Least fixed point of the failed component, the components its failure
    effects cite, and everything downstream of those along relationships.
    """
    comp = pkg.component(component_id)
    mode = _find_mode(comp, mode_name, table)
    start = {comp.id}
    if mode.inline is not None:
        start.update(e.affected_component for e in mode.inline.effects)
    return _closure(start, _downstream(pkg))


# -- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class FmeaEntry:
    component_id: str
    mode_name: str
    lambda_mode: float
    effect_class: str
    affected: frozenset[str] = frozenset()
    evidence: str = ""
    coverage: float | None = None
    lambda_spf: float = 0.0
    lambda_rf: float = 0.0

    @property
    def hazardous(self) -> bool:
        return self.effect_class != SAFE

    def to_dict(self) -> dict[str, Any]:
        return {
            "component": self.component_id, "mode": self.mode_name, "lambdaMode": self.lambda_mode,
            "effectClass": self.effect_class, "affected": sorted(self.affected), "evidence": self.evidence,
            "coverage": self.coverage, "lambdaSPF": self.lambda_spf, "lambdaRF": self.lambda_rf,
        }


def spfm_value(lambda_spf: float, lambda_rf: float, lambda_sr: float) -> float:
    if lambda_sr <= 0:
        return 1.0
    # same value as 1 - (spf + rf) / sr, without the cancellation error
    return min(1.0, max(0.0, (lambda_sr - (lambda_spf + lambda_rf)) / lambda_sr))


@dataclass(frozen=True)
class FmeaReport:
    entries: tuple[FmeaEntry, ...]
    spfm: float
    lambda_total_safety_related: float
    lambda_by_component: Mapping[str, float] = field(default_factory=dict)
    scopes: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    method: str = "graph"

    def hazardous_pairs(self) -> set[tuple[str, str]]:
        return {(e.component_id, e.mode_name) for e in self.entries if e.hazardous}

    def spfm_for(self, target: str) -> float:
        if target not in self.scopes:
            raise UnknownTarget(target)
        scope = set(self.scopes[target])
        spf = sum(e.lambda_spf for e in self.entries if e.component_id in scope)
        rf = sum(e.lambda_rf for e in self.entries if e.component_id in scope)
        sr = sum(self.lambda_by_component[c] for c in scope)
        return spfm_value(spf, rf, sr)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "spfm": self.spfm,
            "lambdaTotalSafetyRelated": self.lambda_total_safety_related,
            "lambdaByComponent": dict(sorted(self.lambda_by_component.items())),
            "entries": [e.to_dict() for e in self.entries],
        }

    def to_text(self) -> str:
        head = f"{'component':<16} {'mode':<14} {'lambda':>10} {'class':<12} {'DC':>6} {'SPF':>10} {'RF':>10}"
        lines = [head, "-" * len(head)]
        for e in self.entries:
            dc = "-" if e.coverage is None else f"{e.coverage:.3f}"
            lines.append(f"{e.component_id:<16} {e.mode_name:<14} {e.lambda_mode:>10.4g} {e.effect_class:<12} "
                         f"{dc:>6} {e.lambda_spf:>10.4g} {e.lambda_rf:>10.4g}")
        lines.append("")
        lines.append(f"safety-related lambda: {self.lambda_total_safety_related:.6g} FIT")
        lines.append(f"SPFM: {self.spfm:.6f}")
        return "\n".join(lines) + "\n"


def _classify(hazardous: bool, lam: float, coverage: float | None) -> tuple[str, float, float]:
    if not hazardous:
        return SAFE, 0.0, 0.0
    if coverage is None:
        return SINGLE_POINT, lam, 0.0
    if coverage >= 1.0:
        return DETECTED, 0.0, 0.0
    return RESIDUAL, 0.0, lam * (1.0 - coverage)


def _scopes(pkg: DigitalTwinPackage, sr: set[str]) -> dict[str, tuple[str, ...]]:
    scopes: dict[str, tuple[str, ...]] = {pkg.id: tuple(sorted(sr))}
    for cp in pkg.component_packages:
        scopes[cp.id] = tuple(sorted(c.id for c in cp.all_components() if c.id in sr))
        for c in cp.all_components():
            scopes[c.id] = tuple(sorted(x.id for x in c.walk() if x.id in sr))
    return scopes


def _run_fmea(pkg: DigitalTwinPackage, table: ReliabilityTable | None, judge, method: str) -> FmeaReport:
    mechanisms = _mechanisms(pkg)
    entries: list[FmeaEntry] = []
    rates: dict[str, float] = {}
    for comp in pkg.all_components():
        if not comp.safety_related:
            continue
        rate, modes = failure_data(comp, table)
        rates[comp.id] = rate
        for mode in modes:
            lam = rate * mode.fraction
            hazardous, affected, evidence = judge(comp, mode)
            cov = _coverage(mechanisms, mode.inline)
            cls, spf, rf = _classify(hazardous, lam, cov)
            entries.append(FmeaEntry(comp.id, mode.name, lam, cls, affected, evidence, cov, spf, rf))
    entries.sort(key=lambda e: (e.component_id, e.mode_name))
    total = sum(rates.values())
    spfm = spfm_value(sum(e.lambda_spf for e in entries), sum(e.lambda_rf for e in entries), total)
    return FmeaReport(tuple(entries), spfm, total, rates, _scopes(pkg, set(rates)), method)


def run_fmea_graph(pkg: DigitalTwinPackage, table: ReliabilityTable | None = None) -> FmeaReport:
    """FMEA from the failure logic in the model: a mode is hazardous when
    its effect closure contains a hazard-sink component."""
    adj = _downstream(pkg)
    sinks = {c.id for c in pkg.all_components() if c.hazard_sink}

    def judge(comp: Component, mode: ResolvedMode):
        start = {comp.id}
        if mode.inline is not None:
            start.update(e.affected_component for e in mode.inline.effects)
        closure = _closure(start, adj)
        hit = sorted(closure & sinks)
        evidence = f"closure reaches {','.join(hit)}" if hit else "closure reaches no hazard sink"
        return bool(hit), closure, evidence

    return _run_fmea(pkg, table, judge, "graph")


PLANT_ELEMENT_TAG = "plant.element"


def run_fmea_sim(
    pkg: DigitalTwinPackage,
    table: ReliabilityTable | None,
    plant_config: PlantConfig,
    criterion: Criterion = Criterion(),
    component_map: Mapping[str, str] | None = None,
) -> FmeaReport:
    """FMEA by fault injection: each mode's fault mapping is applied to the
    plant and the faulted run is compared with the nominal one.

    ``component_map`` maps component ids to simulator elements; by default
    it is read from each component's ``plant.element`` tagged value.
    """
    if component_map is None:
        component_map = {c.id: c.tag(PLANT_ELEMENT_TAG) for c in pkg.all_components()
                         if c.tag(PLANT_ELEMENT_TAG)}
    nominal = run(plant_config)
    cache: dict[str, tuple[bool, float]] = {}

    def judge(comp: Component, mode: ResolvedMode):
        if comp.id not in component_map:
            raise UnmappedComponent(comp.id)
        key = json.dumps(dict(mode.fault_mapping), sort_keys=True)
        if key not in cache:
            faulted = run(inject_fault(plant_config, mode.fault_mapping))
            verdict = classify_trajectory(nominal, faulted, criterion)
            cache[key] = (verdict.hazardous, verdict.deviation)
        hazardous, deviation = cache[key]
        return hazardous, frozenset({comp.id}), f"deviation={deviation:.6g}"

    return _run_fmea(pkg, table, judge, "sim")


# -- requirements -------------------------------------------------------------

@dataclass(frozen=True)
class Requirement:
    target_id: str
    threshold: float
    metric: str = "SPFM"

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ReliabilityError(f"threshold {self.threshold} outside [0, 1]")


@dataclass(frozen=True)
class RequirementResult:
    requirement: Requirement
    passed: bool
    actual: float


def load_requirements(path_or_data: str | Path | Any) -> list[Requirement]:
    data = path_or_data
    if isinstance(path_or_data, (str, Path)):
        data = json.loads(Path(path_or_data).read_text(encoding="utf-8"))
    items = data.get("requirements", []) if isinstance(data, dict) else data
    try:
        return [Requirement(str(r["target"]), float(r["threshold"]), str(r.get("metric", "SPFM"))) for r in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise ReliabilityError(f"malformed requirement: {exc!r}") from None


def check_requirements(report: FmeaReport, requirements: Iterable[Requirement]) -> list[RequirementResult]:
    """A requirement passes when the SPFM of its target is >= its threshold."""
    out = []
    for req in requirements:
        if req.metric != "SPFM":
            raise ReliabilityError(f"unsupported metric {req.metric!r}")
        actual = report.spfm_for(req.target_id)
        out.append(RequirementResult(req, actual >= req.threshold, actual))
    return out
