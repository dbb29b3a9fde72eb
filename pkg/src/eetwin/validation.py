"""Well-formedness rules for twin models.

``validate`` reports every broken rule as a :class:`Violation`; it never
raises for a malformed model.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable

from .sdtm import (
    TOLERANCE_TYPES,
    Activity,
    ArtifactPackage,
    ArtifactRecord,
    Category,
    Component,
    ComponentPackage,
    ComponentRelationship,
    DigitalTwinPackage,
    Event,
    Expression,
    FailureEffect,
    FailureMode,
    Function,
    ModelElement,
    ModelIndex,
    PackageInterface,
    SafetyMechanism,
    SdtmError,
    Term,
    TerminologyPackage,
    iter_elements,
)


@dataclass(frozen=True)
class Violation:
    element_id: str
    rule: str
    message: str
    ref: str | None = None


class ValidationFailed(SdtmError, ValueError):
    def __init__(self, violations: Iterable[Violation]):
        self.violations = list(violations)
        lines = "; ".join(f"{v.element_id}: {v.rule}" for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"{len(self.violations)} violation(s): {lines}{more}")


RULES = frozenset({
    "activity-interval",
    "binding-resolves",
    "category-member-resolves",
    "citation-resolves",
    "component-type-resolves",
    "constraint",
    "coverage-range",
    "covered-by-resolves",
    "dynamic-needs-io",
    "effect-target-resolves",
    "endpoint-required",
    "endpoint-syntax",
    "extref-location",
    "extref-model-type",
    "fit-nonnegative",
    "fraction-range",
    "fraction-sum",
    "id-unique",
    "interface-export",
    "io-direction",
    "io-name-unique",
    "lang-nonempty",
    "legal-range-order",
    "name-lang-unique",
    "relationship-direction",
    "relationship-endpoint",
    "relationship-node",
    "sil-range",
    "timestamp-utc",
    "tolerance-type",
})

# rules whose failure means an id cannot be resolved
REFERENCE_RULES = frozenset({
    "citation-resolves",
    "category-member-resolves",
    "binding-resolves",
    "component-type-resolves",
    "covered-by-resolves",
    "effect-target-resolves",
    "relationship-endpoint",
})

_ENDPOINT = re.compile(
    r"^(?:\[[0-9A-Fa-f:.]+\]|[A-Za-z0-9](?:[A-Za-z0-9.-]{0,251}[A-Za-z0-9])?):(\d{1,5})$"
)


def valid_endpoint(text: str) -> bool:
    m = _ENDPOINT.match(text)
    return bool(m) and 1 <= int(m.group(1)) <= 65535


def _is_utc(ts: datetime | None) -> bool:
    return ts is None or (ts.tzinfo is not None and ts.utcoffset() == timedelta(0))


def is_d2p_sender(component: Component) -> bool:
    return (component.tag("d2p") or "").lower() == "true"


class _Checker:
    def __init__(self, pkg: DigitalTwinPackage, constraints: bool):
        self.pkg = pkg
        self.index = ModelIndex(pkg)
        self.constraints = constraints
        self.out: list[Violation] = []

    def add(self, el: ModelElement | str, rule: str, message: str, ref: str | None = None) -> None:
        eid = el if isinstance(el, str) else el.id
        self.out.append(Violation(eid, rule, message, ref))

    def ref(self, el: ModelElement, scope: str | None, target: str, rule: str,
            kind: type | tuple[type, ...], what: str) -> None:
        if not self.index.visible(target, scope):
            self.add(el, rule, f"{what} {target!r} does not resolve", target)
        elif not isinstance(self.index.elements[target], kind):
            self.add(el, rule, f"{what} {target!r} is a {type(self.index.elements[target]).__name__}", target)

    def run(self) -> list[Violation]:
        for dup, n in Counter(self.index.duplicates).items():
            for _ in range(n):
                self.add(dup, "id-unique", f"id {dup!r} is defined more than once")
        for el, scope in iter_elements(self.pkg):
            self.element(el, scope)
            checker = getattr(self, "check_" + type(el).__name__, None)
            if checker is not None:
                checker(el, scope)
        return self.out

    # -- shared base ---------------------------------------------------------

    def element(self, el: ModelElement, scope: str | None) -> None:
        for lang, n in Counter(ls.lang for ls in el.name).items():
            for _ in range(n - 1):
                self.add(el, "name-lang-unique", f"more than one name for language {lang!r}")
        for ls in el.name:
            if not ls.lang:
                self.add(el, "lang-nonempty", "name with an empty language code")
        for cid in el.citations:
            if not self.index.visible(cid, scope):
                self.add(el, "citation-resolves", f"citation {cid!r} does not resolve", cid)
        for ref in el.external_references:
            if not ref.location:
                self.add(el, "extref-location", "external reference without a location")
            if not ref.model_type:
                self.add(el, "extref-model-type", "external reference without a model type")
        if self.constraints:
            self.implementation_constraints(el)

    def implementation_constraints(self, el: ModelElement) -> None:
        from .query import ParseError, TypeMismatch, eval_query

        for expr in el.implementation_constraints:
            try:
                ok = bool(eval_query(expr, el))
                message = f"constraint {expr!r} is false"
            except (ParseError, TypeMismatch) as exc:
                ok = False
                message = f"constraint {expr!r} failed: {exc}"
            if not ok:
                self.add(el, "constraint", message)

    def interfaces_and_bindings(self, pkg: ModelElement) -> None:
        for iface in getattr(pkg, "interfaces", ()):
            for eid in iface.exports:
                if self.index.scopes.get(eid, "\0") != pkg.id:
                    self.add(iface, "interface-export", f"exported id {eid!r} is not contained in {pkg.id!r}", eid)
        for b in getattr(pkg, "bindings", ()):
            provider = self.index.packages.get(b.provider)
            iface = self.index.elements.get(b.interface)
            if provider is None:
                self.add(pkg, "binding-resolves", f"binding provider {b.provider!r} is not a package", b.provider)
            elif not isinstance(iface, PackageInterface) or self.index.scopes.get(b.interface) != b.provider:
                self.add(pkg, "binding-resolves",
                         f"interface {b.interface!r} is not an interface of {b.provider!r}", b.interface)

    # -- per type ------------------------------------------------------------

    def check_DigitalTwinPackage(self, el: DigitalTwinPackage, scope: str | None) -> None:
        for iface in el.interfaces:
            for eid in iface.exports:
                if eid not in self.index:
                    self.add(iface, "interface-export", f"exported id {eid!r} does not exist", eid)

    def check_TerminologyPackage(self, el: TerminologyPackage, scope: str | None) -> None:
        self.interfaces_and_bindings(el)

    def check_ArtifactPackage(self, el: ArtifactPackage, scope: str | None) -> None:
        self.interfaces_and_bindings(el)

    def check_ComponentPackage(self, el: ComponentPackage, scope: str | None) -> None:
        self.interfaces_and_bindings(el)

    def check_Category(self, el: Category, scope: str | None) -> None:
        for m in el.members:
            self.ref(el, scope, m, "category-member-resolves", (Term, Expression), "member")

    def check_ArtifactRecord(self, el: ArtifactRecord, scope: str | None) -> None:
        if not _is_utc(el.creation_date):
            self.add(el, "timestamp-utc", "creation date is not UTC")

    def check_Activity(self, el: Activity, scope: str | None) -> None:
        if not (_is_utc(el.start_time) and _is_utc(el.end_time)):
            self.add(el, "timestamp-utc", "activity times are not UTC")
        elif el.start_time > el.end_time:
            self.add(el, "activity-interval", "activity ends before it starts")

    def check_Event(self, el: Event, scope: str | None) -> None:
        if not _is_utc(el.timestamp):
            self.add(el, "timestamp-utc", "event timestamp is not UTC")

    def check_Component(self, c: Component, scope: str | None) -> None:
        if not c.fit >= 0:
            self.add(c, "fit-nonnegative", f"FIT {c.fit} is negative")
        if not 0 <= c.safety_integrity_level <= 4:
            self.add(c, "sil-range", f"safety integrity level {c.safety_integrity_level} outside 0..4")
        if c.component_type_term is not None:
            self.ref(c, scope, c.component_type_term, "component-type-resolves", Term, "component type")
        if c.dynamic and not c.io_nodes:
            self.add(c, "dynamic-needs-io", "dynamic component without IO nodes")
        if c.endpoint is not None and not valid_endpoint(c.endpoint):
            self.add(c, "endpoint-syntax", f"endpoint {c.endpoint!r} is not host:port")
        if c.dynamic and is_d2p_sender(c) and c.endpoint is None:
            self.add(c, "endpoint-required", "dynamic D2P sender without endpoint")
        for nodes, direction in ((c.inputs, "in"), (c.outputs, "out")):
            for n in nodes:
                if n.direction != direction:
                    self.add(c, "io-direction", f"node {n.name!r} listed as {direction} has direction {n.direction!r}")
                if n.legal_range is not None and not n.legal_range[0] <= n.legal_range[1]:
                    self.add(c, "legal-range-order", f"node {n.name!r} has min > max")
                if not _is_utc(n.last_updated):
                    self.add(c, "timestamp-utc", f"node {n.name!r} update time is not UTC")
        for name, n in Counter(n.name for n in c.io_nodes).items():
            for _ in range(n - 1):
                self.add(c, "io-name-unique", f"IO node name {name!r} repeated")
        total = sum(fm.fraction for fm in c.failure_modes)
        if total > 1.0 + 1e-9:
            self.add(c, "fraction-sum", f"failure-mode fractions sum to {total:g} > 1")

    def check_Function(self, el: Function, scope: str | None) -> None:
        if el.tolerance_type not in TOLERANCE_TYPES:
            self.add(el, "tolerance-type", f"tolerance type {el.tolerance_type!r} is not one of {TOLERANCE_TYPES}")

    def check_FailureMode(self, el: FailureMode, scope: str | None) -> None:
        if not 0.0 <= el.fraction <= 1.0:
            self.add(el, "fraction-range", f"fraction {el.fraction} outside [0, 1]")
        for sm in el.covered_by:
            self.ref(el, scope, sm, "covered-by-resolves", SafetyMechanism, "safety mechanism")

    def check_FailureEffect(self, el: FailureEffect, scope: str | None) -> None:
        self.ref(el, scope, el.affected_component, "effect-target-resolves", Component, "affected component")

    def check_SafetyMechanism(self, el: SafetyMechanism, scope: str | None) -> None:
        if not 0.0 <= el.diagnostic_coverage <= 1.0:
            self.add(el, "coverage-range", f"diagnostic coverage {el.diagnostic_coverage} outside [0, 1]")

    def check_ComponentRelationship(self, el: ComponentRelationship, scope: str | None) -> None:
        for end, direction in ((el.source, "out"), (el.target, "in")):
            if not self.index.visible(end.component, scope) or not isinstance(
                    self.index.elements[end.component], Component):
                self.add(el, "relationship-endpoint", f"component {end.component!r} does not resolve", end.component)
                continue
            comp = self.index.elements[end.component]
            nodes = comp.outputs if direction == "out" else comp.inputs
            if comp.node(end.node) is None:
                self.add(el, "relationship-node", f"{end.component!r} has no IO node {end.node!r}")
            elif all(n.name != end.node or n.direction != direction for n in nodes):
                self.add(el, "relationship-direction", f"{end.component}.{end.node} is not an {direction} node")


def validate(pkg: DigitalTwinPackage, constraints: bool = True) -> list[Violation]:
    """Return every violated well-formedness rule; empty means well-formed.

    With ``constraints`` the elements' implementation constraints are
    evaluated as well.
    """
    return _Checker(pkg, constraints).run()
