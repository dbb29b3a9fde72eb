"""Structured digital twin model: Base, Terminology, Artifact, Component
and DigitalTwin packages.

All model types are frozen pydantic models. A change to a package is a new
package value (see ``model_copy(update=...)`` and the helpers below).
"""

from __future__ import annotations

import typing
from datetime import datetime
from typing import Any, Iterator, Optional, Union

from pydantic import BaseModel, ConfigDict
from pydantic.alias_generators import to_camel

Scalar = Union[int, float]


class SdtmError(Exception):
    pass


class DanglingReference(SdtmError, LookupError):
    def __init__(self, ref: str, context: str | None = None):
        self.ref = ref
        self.context = context
        msg = repr(ref) if context is None else f"{ref!r} (cited from {context!r})"
        super().__init__(msg)


class DuplicateId(SdtmError, ValueError):
    def __init__(self, element_id: str):
        self.element_id = element_id
        super().__init__(repr(element_id))


class _Model(BaseModel):
    model_config = ConfigDict(
        frozen=True,
        alias_generator=to_camel,
        populate_by_name=True,
        extra="forbid",
    )


class LangString(_Model):
    lang: str
    text: str = ""


class TaggedValue(_Model):
    key: str
    value: str


class ExternalReference(_Model):
    location: str
    model_type: str
    metadata: tuple[TaggedValue, ...] = ()
    constraint: Optional[str] = None


class ModelElement(_Model):
    id: str
    name: tuple[LangString, ...] = ()
    descriptions: tuple[str, ...] = ()
    tagged_values: tuple[TaggedValue, ...] = ()
    notes: tuple[str, ...] = ()
    implementation_constraints: tuple[str, ...] = ()
    external_references: tuple[ExternalReference, ...] = ()
    citations: tuple[str, ...] = ()

    def tag(self, key: str, default: str | None = None) -> str | None:
        for tv in self.tagged_values:
            if tv.key == key:
                return tv.value
        return default

    @property
    def label(self) -> str:
        for ls in self.name:
            if ls.lang == "en":
                return ls.text
        return self.name[0].text if self.name else self.id


class PackageInterface(ModelElement):
    exports: tuple[str, ...] = ()


class PackageBinding(_Model):
    interface: str
    provider: str


# -- terminology --------------------------------------------------------------

class Term(ModelElement):
    pass


class Expression(ModelElement):
    semantics: str = ""


class Category(ModelElement):
    members: tuple[str, ...] = ()


class TerminologyPackage(ModelElement):
    terms: tuple[Term, ...] = ()
    expressions: tuple[Expression, ...] = ()
    categories: tuple[Category, ...] = ()
    interfaces: tuple[PackageInterface, ...] = ()
    bindings: tuple[PackageBinding, ...] = ()


# -- artifacts ----------------------------------------------------------------

class ArtifactRecord(ModelElement):
    version: str = ""
    creation_date: Optional[datetime] = None


class Activity(ModelElement):
    start_time: datetime
    end_time: datetime


class Event(ModelElement):
    timestamp: datetime


class Resource(ModelElement):
    pass


class ArtifactPackage(ModelElement):
    artifacts: tuple[ArtifactRecord, ...] = ()
    activities: tuple[Activity, ...] = ()
    events: tuple[Event, ...] = ()
    resources: tuple[Resource, ...] = ()
    interfaces: tuple[PackageInterface, ...] = ()
    bindings: tuple[PackageBinding, ...] = ()


# -- components ---------------------------------------------------------------

TOLERANCE_TYPES = ("1oo1", "1oo2", "1oo3", "2oo3")


class IONode(_Model):
    name: str
    direction: str
    value: Optional[Scalar] = None
    unit: str = ""
    last_updated: Optional[datetime] = None
    legal_range: Optional[tuple[float, float]] = None

    def in_range(self, value: float) -> bool:
        if self.legal_range is None:
            return True
        lo, hi = self.legal_range
        return lo <= value <= hi


class Function(ModelElement):
    tolerance_type: str = "1oo1"


class FailureEffect(ModelElement):
    affected_component: str
    description: str = ""


class SafetyMechanism(ModelElement):
    diagnostic_coverage: float = 0.0


class FailureMode(ModelElement):
    fraction: float = 0.0
    effects: tuple[FailureEffect, ...] = ()
    covered_by: tuple[str, ...] = ()


class Component(ModelElement):
    reused: bool = False
    cots: bool = False
    fit: float = 0.0
    safety_integrity_level: int = 0
    component_type_term: Optional[str] = None
    dynamic: bool = False
    endpoint: Optional[str] = None
    inputs: tuple[IONode, ...] = ()
    outputs: tuple[IONode, ...] = ()
    functions: tuple[Function, ...] = ()
    failure_modes: tuple[FailureMode, ...] = ()
    safety_mechanisms: tuple[SafetyMechanism, ...] = ()
    subcomponents: tuple[Component, ...] = ()
    safety_related: bool = False
    hazard_sink: bool = False

    @property
    def io_nodes(self) -> tuple[IONode, ...]:
        return self.inputs + self.outputs

    def node(self, name: str) -> IONode | None:
        for n in self.io_nodes:
            if n.name == name:
                return n
        return None

    def walk(self) -> Iterator[Component]:
        yield self
        for sub in self.subcomponents:
            yield from sub.walk()


class RelationshipEnd(_Model):
    component: str
    node: str


class ComponentRelationship(ModelElement):
    source: RelationshipEnd
    target: RelationshipEnd


class ComponentPackage(ModelElement):
    components: tuple[Component, ...] = ()
    relationships: tuple[ComponentRelationship, ...] = ()
    interfaces: tuple[PackageInterface, ...] = ()
    bindings: tuple[PackageBinding, ...] = ()

    def all_components(self) -> Iterator[Component]:
        for c in self.components:
            yield from c.walk()


class DigitalTwinPackage(ModelElement):
    terminology_packages: tuple[TerminologyPackage, ...] = ()
    artifact_packages: tuple[ArtifactPackage, ...] = ()
    component_packages: tuple[ComponentPackage, ...] = ()
    interfaces: tuple[PackageInterface, ...] = ()

    def all_components(self) -> Iterator[Component]:
        for cp in self.component_packages:
            yield from cp.all_components()

    def component(self, component_id: str) -> Component:
        for c in self.all_components():
            if c.id == component_id:
                return c
        raise DanglingReference(component_id)

    def relationships(self) -> Iterator[ComponentRelationship]:
        for cp in self.component_packages:
            yield from cp.relationships


SubPackage = Union[TerminologyPackage, ArtifactPackage, ComponentPackage]


# -- structure introspection --------------------------------------------------

def _element_type(annotation: Any) -> type[ModelElement] | None:
    if typing.get_origin(annotation) is tuple:
        args = typing.get_args(annotation)
        if len(args) == 2 and args[1] is Ellipsis:
            inner = args[0]
            if isinstance(inner, type) and issubclass(inner, ModelElement):
                return inner
    return None


def child_slots(cls: type[ModelElement]) -> dict[str, type[ModelElement]]:
    """Fields of ``cls`` that hold lists of model elements, by python name."""
    cache = _SLOT_CACHE.get(cls)
    if cache is None:
        hints = typing.get_type_hints(cls)
        cache = {}
        for name in cls.model_fields:
            et = _element_type(hints[name])
            if et is not None:
                cache[name] = et
        _SLOT_CACHE[cls] = cache
    return cache


_SLOT_CACHE: dict[type, dict[str, type[ModelElement]]] = {}


def iter_elements(
    element: ModelElement, scope: str | None = None, _top: bool = True
) -> Iterator[tuple[ModelElement, str | None]]:
    """Yield ``(element, scope)`` for ``element`` and every nested element.

    ``scope`` is the id of the enclosing terminology/artifact/component
    package, or None for the root and for the packages themselves.
    """
    yield element, scope
    for slot in child_slots(type(element)):
        for child in getattr(element, slot):
            if _top and isinstance(child, (TerminologyPackage, ArtifactPackage, ComponentPackage)):
                yield from iter_elements(child, child.id, _top=False)
            else:
                yield from iter_elements(child, scope, _top=False)


class ModelIndex:
    """Id lookup honouring package interfaces and bindings."""

    def __init__(self, pkg: DigitalTwinPackage):
        self.pkg = pkg
        self.elements: dict[str, ModelElement] = {}
        self.scopes: dict[str, str | None] = {}
        self.duplicates: list[str] = []
        self.packages: dict[str, ModelElement] = {}
        for el, scope in iter_elements(pkg):
            if el.id in self.elements:
                self.duplicates.append(el.id)
                continue
            self.elements[el.id] = el
            self.scopes[el.id] = scope
            if isinstance(el, (TerminologyPackage, ArtifactPackage, ComponentPackage)):
                self.packages[el.id] = el
        self._visible: dict[str, set[str]] = {}

    def __contains__(self, element_id: str) -> bool:
        return element_id in self.elements

    def exported_through(self, package_id: str) -> set[str]:
        """Ids made visible inside ``package_id`` by its bindings."""
        if package_id not in self._visible:
            ids: set[str] = set()
            pkg = self.packages.get(package_id)
            for b in getattr(pkg, "bindings", ()):
                iface = self.elements.get(b.interface)
                if isinstance(iface, PackageInterface) and self.scopes.get(b.interface) == b.provider:
                    ids.update(e for e in iface.exports if self.scopes.get(e) == b.provider)
            self._visible[package_id] = ids
        return self._visible[package_id]

    def visible(self, target_id: str, scope: str | None) -> bool:
        if target_id not in self.elements:
            return False
        target_scope = self.scopes[target_id]
        if scope is None or target_scope is None or target_scope == scope:
            return True
        return target_id in self.exported_through(scope)

    def resolve(self, element_id: str, scope: str | None = None) -> ModelElement:
        if not self.visible(element_id, scope):
            raise DanglingReference(element_id, scope)
        return self.elements[element_id]


def resolve(pkg: DigitalTwinPackage, element_id: str, scope: str | None = None) -> ModelElement:
    """Look up ``element_id``; with ``scope`` (a package id) only visible ids resolve."""
    return ModelIndex(pkg).resolve(element_id, scope)


# -- defaults and small edits -------------------------------------------------

DEFAULT_TERMINOLOGY_ID = "sdtm.types"
DEFAULT_INTERFACE_ID = "sdtm.types.api"


def default_terminology() -> TerminologyPackage:
    """Built-in component types: system, hardware, software."""
    names = ("system", "hardware", "software")
    return TerminologyPackage(
        id=DEFAULT_TERMINOLOGY_ID,
        name=(LangString(lang="en", text="Component types"),),
        terms=tuple(Term(id=n, name=(LangString(lang="en", text=n),)) for n in names),
        interfaces=(PackageInterface(id=DEFAULT_INTERFACE_ID, exports=names),),
    )


def replace_component(pkg: DigitalTwinPackage, component_id: str, **changes: Any) -> DigitalTwinPackage:
    """Return ``pkg`` with one component (at any nesting depth) updated."""
    found = False

    def fix(c: Component) -> Component:
        nonlocal found
        if c.id == component_id:
            found = True
            return c.model_copy(update=changes)
        if not c.subcomponents:
            return c
        return c.model_copy(update={"subcomponents": tuple(fix(s) for s in c.subcomponents)})

    cps = tuple(cp.model_copy(update={"components": tuple(fix(c) for c in cp.components)})
                for cp in pkg.component_packages)
    if not found:
        raise DanglingReference(component_id)
    return pkg.model_copy(update={"component_packages": cps})


def set_node_value(
    pkg: DigitalTwinPackage, component_id: str, node: str, value: Scalar, timestamp: datetime
) -> DigitalTwinPackage:
    comp = pkg.component(component_id)

    def upd(nodes: tuple[IONode, ...]) -> tuple[IONode, ...]:
        return tuple(n.model_copy(update={"value": value, "last_updated": timestamp}) if n.name == node else n
                     for n in nodes)

    if comp.node(node) is None:
        raise KeyError(node)
    return replace_component(pkg, component_id, inputs=upd(comp.inputs), outputs=upd(comp.outputs))
