"""One mutation of the case-study model per well-formedness rule.

Each entry breaks exactly one rule, so validate() must report exactly one
violation carrying that rule name.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from typing import Callable

from eetwin.sdtm import (
    Category,
    Component,
    ComponentRelationship,
    DigitalTwinPackage,
    ExternalReference,
    IONode,
    LangString,
    PackageBinding,
    PackageInterface,
    RelationshipEnd,
    replace_component,
)

Mutation = Callable[[DigitalTwinPackage], DigitalTwinPackage]


def _cp(pkg: DigitalTwinPackage, **changes) -> DigitalTwinPackage:
    cp = pkg.component_packages[0].model_copy(update=changes)
    return pkg.model_copy(update={"component_packages": (cp,) + pkg.component_packages[1:]})


def _tp(pkg: DigitalTwinPackage, **changes) -> DigitalTwinPackage:
    tp = pkg.terminology_packages[0].model_copy(update=changes)
    return pkg.model_copy(update={"terminology_packages": (tp,) + pkg.terminology_packages[1:]})


def _ap(pkg: DigitalTwinPackage, **changes) -> DigitalTwinPackage:
    ap = pkg.artifact_packages[0].model_copy(update=changes)
    return pkg.model_copy(update={"artifact_packages": (ap,)})


def _motor(pkg: DigitalTwinPackage, **changes) -> DigitalTwinPackage:
    return replace_component(pkg, "motor", **changes)


def _pid(pkg: DigitalTwinPackage, **changes) -> DigitalTwinPackage:
    return replace_component(pkg, "pid", **changes)


def _with_rel(pkg: DigitalTwinPackage, src: tuple[str, str], dst: tuple[str, str]) -> DigitalTwinPackage:
    rel = ComponentRelationship(id="extra-rel", source=RelationshipEnd(component=src[0], node=src[1]),
                                target=RelationshipEnd(component=dst[0], node=dst[1]))
    return _cp(pkg, relationships=pkg.component_packages[0].relationships + (rel,))


def _hbridge_modes(pkg: DigitalTwinPackage, fn) -> DigitalTwinPackage:
    hb = pkg.component("hbridge")
    return replace_component(pkg, "hbridge", failure_modes=fn(hb.failure_modes))


def _filter_mechanism(pkg: DigitalTwinPackage, dc: float) -> DigitalTwinPackage:
    f = pkg.component("filter")
    sm = f.safety_mechanisms[0].model_copy(update={"diagnostic_coverage": dc})
    return replace_component(pkg, "filter", safety_mechanisms=(sm,))


def _local(pkg: DigitalTwinPackage) -> DigitalTwinPackage:
    ap = pkg.artifact_packages[0]
    rec = ap.artifacts[0].model_copy(update={"creation_date": datetime(2024, 1, 1, tzinfo=timezone(timedelta(hours=1)))})
    return _ap(pkg, artifacts=(rec,))


MUTATIONS: dict[str, Mutation] = {
    "id-unique": lambda p: _pid(p, subcomponents=(Component(id="commissioning"),)),
    "name-lang-unique": lambda p: _pid(p, name=(LangString(lang="en", text="a"), LangString(lang="en", text="b"))),
    "lang-nonempty": lambda p: _pid(p, name=(LangString(lang="", text="nameless"),)),
    "citation-resolves": lambda p: p.model_copy(update={"citations": ("ghost",)}),
    "extref-location": lambda p: p.model_copy(update={"external_references": (
        ExternalReference(location="", model_type="requirements"),)}),
    "extref-model-type": lambda p: p.model_copy(update={"external_references": (
        ExternalReference(location="r.json", model_type=""),)}),
    "constraint": lambda p: _pid(p, implementation_constraints=("fit > 1000",)),
    "interface-export": lambda p: _cp(p, interfaces=p.component_packages[0].interfaces + (
        PackageInterface(id="bad-api", exports=("DCMotor",)),)),
    "binding-resolves": lambda p: _ap(p, bindings=(PackageBinding(interface="motor-control.components.api",
                                                                  provider="nowhere"),)
                                      + p.artifact_packages[0].bindings),
    "category-member-resolves": lambda p: _tp(p, categories=(Category(id="kinds", members=("ghost-term",)),)),
    "timestamp-utc": _local,
    "activity-interval": lambda p: _ap(p, activities=(p.artifact_packages[0].activities[0].model_copy(update={
        "end_time": datetime(2020, 1, 1, tzinfo=timezone.utc)}),)),
    "fit-nonnegative": lambda p: _pid(p, fit=-1.0),
    "sil-range": lambda p: _pid(p, safety_integrity_level=5),
    "component-type-resolves": lambda p: _pid(p, component_type_term="Flux"),
    "dynamic-needs-io": lambda p: _pid(p, subcomponents=(Component(id="ghost-sensor", dynamic=True),)),
    "endpoint-syntax": lambda p: _motor(p, endpoint="localhost"),
    "endpoint-required": lambda p: _motor(p, endpoint=None),
    "io-direction": lambda p: _pid(p, inputs=(IONode(name="setpoint", direction="out"),
                                              p.component("pid").inputs[1])),
    "legal-range-order": lambda p: _pid(p, outputs=(IONode(name="duty", direction="out", legal_range=(1.0, -1.0)),)),
    "io-name-unique": lambda p: _pid(p, outputs=(IONode(name="duty", direction="out"),
                                                 IONode(name="duty", direction="out"))),
    "fraction-sum": lambda p: _hbridge_modes(p, lambda ms: (ms[0], ms[1].model_copy(update={"fraction": 0.6}))),
    "tolerance-type": lambda p: _pid(p, functions=(p.component("pid").functions[0].model_copy(
        update={"tolerance_type": "3oo2"}),)),
    "fraction-range": lambda p: _hbridge_modes(p, lambda ms: (ms[0], ms[1].model_copy(update={"fraction": -0.1}))),
    "covered-by-resolves": lambda p: _hbridge_modes(p, lambda ms: (
        ms[0].model_copy(update={"covered_by": ("no-such-mechanism",)}), ms[1])),
    "effect-target-resolves": lambda p: _hbridge_modes(p, lambda ms: (
        ms[0].model_copy(update={"effects": (ms[0].effects[0].model_copy(
            update={"affected_component": "ghost"}),)}), ms[1])),
    "coverage-range": lambda p: _filter_mechanism(p, 1.5),
    "relationship-endpoint": lambda p: _with_rel(p, ("ghost", "out"), ("pid", "setpoint")),
    "relationship-node": lambda p: _with_rel(p, ("motor", "torque"), ("pid", "setpoint")),
    "relationship-direction": lambda p: _with_rel(p, ("motor", "voltage"), ("pid", "setpoint")),
}
