"""Neutral block-diagram interchange format and its import into a component package.

A diagram file is a JSON object::

    {"blocks": [{"id": "motor", "type": "DCMotor", "params": {"R": 1.0},
                 "inPorts": ["voltage"], "outPorts": ["speed"],
                 "blocks": [...], "lines": [...]}],
     "lines": [{"src": "motor", "srcPort": "speed", "dst": "filter", "dstPort": "raw"}]}

A block carrying ``blocks``/``lines`` is a subsystem; its lines connect its
own children.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Union

from .sdtm import (
    Component,
    ComponentPackage,
    ComponentRelationship,
    IONode,
    LangString,
    PackageBinding,
    PackageInterface,
    RelationshipEnd,
    TaggedValue,
    Term,
    TerminologyPackage,
)

ParamValue = Union[str, int, float, bool]


class DiagramError(ValueError):
    pass


class UnresolvedLine(DiagramError):
    pass


@dataclass(frozen=True)
class Line:
    src: str
    src_port: str
    dst: str
    dst_port: str


@dataclass(frozen=True)
class Block:
    id: str
    type: str
    params: Mapping[str, ParamValue] = field(default_factory=dict)
    in_ports: tuple[str, ...] = ()
    out_ports: tuple[str, ...] = ()
    name: str | None = None
    subsystem: "BlockDiagram | None" = None


@dataclass(frozen=True)
class BlockDiagram:
    blocks: tuple[Block, ...] = ()
    lines: tuple[Line, ...] = ()

    def block_count(self) -> int:
        return sum(1 + (b.subsystem.block_count() if b.subsystem else 0) for b in self.blocks)

    def line_count(self) -> int:
        return len(self.lines) + sum(b.subsystem.line_count() for b in self.blocks if b.subsystem)

    def to_dict(self) -> dict[str, Any]:
        return {
            "blocks": [_block_dict(b) for b in self.blocks],
            "lines": [{"src": ln.src, "srcPort": ln.src_port, "dst": ln.dst, "dstPort": ln.dst_port}
                      for ln in self.lines],
        }

    @classmethod
    def from_dict(cls, data: Any) -> "BlockDiagram":
        if not isinstance(data, dict):
            raise DiagramError("diagram must be a JSON object")
        try:
            blocks = tuple(_parse_block(b) for b in data.get("blocks", []))
            lines = tuple(
                Line(_str(ln["src"]), _str(ln["srcPort"]), _str(ln["dst"]), _str(ln["dstPort"]))
                for ln in data.get("lines", [])
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DiagramError(f"malformed diagram: {exc!r}") from None
        return cls(blocks, lines)

    @classmethod
    def load(cls, path: str | Path) -> "BlockDiagram":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DiagramError(f"malformed diagram JSON: {exc}") from None
        return cls.from_dict(data)


def _str(v: Any) -> str:
    if not isinstance(v, str) or not v:
        raise TypeError(f"expected a non-empty string, got {v!r}")
    return v


def _parse_block(b: Any) -> Block:
    params = dict(b.get("params", {}))
    for k, v in params.items():
        if not isinstance(v, (str, int, float, bool)):
            raise TypeError(f"parameter {k!r} is not a scalar")
    sub = None
    if "blocks" in b or "lines" in b:
        sub = BlockDiagram.from_dict({"blocks": b.get("blocks", []), "lines": b.get("lines", [])})
    return Block(
        id=_str(b["id"]),
        type=_str(b["type"]),
        params=params,
        in_ports=tuple(_str(p) for p in b.get("inPorts", [])),
        out_ports=tuple(_str(p) for p in b.get("outPorts", [])),
        name=b.get("name"),
        subsystem=sub,
    )


def _block_dict(b: Block) -> dict[str, Any]:
    d: dict[str, Any] = {"id": b.id, "type": b.type, "params": dict(b.params),
                         "inPorts": list(b.in_ports), "outPorts": list(b.out_ports)}
    if b.name is not None:
        d["name"] = b.name
    if b.subsystem is not None:
        d.update(b.subsystem.to_dict())
    return d


def check_diagram(d: BlockDiagram) -> None:
    """Raise if ports repeat within a block, block ids repeat within a
    scope, or a line endpoint does not resolve."""
    ids = [b.id for b in d.blocks]
    if len(set(ids)) != len(ids):
        raise DiagramError(f"duplicate block ids in {ids}")
    by_id = {b.id: b for b in d.blocks}
    for b in d.blocks:
        ports = b.in_ports + b.out_ports
        if len(set(ports)) != len(ports):
            raise DiagramError(f"block {b.id!r} repeats a port name")
        if b.subsystem is not None:
            check_diagram(b.subsystem)
    if len(set(d.lines)) != len(d.lines):
        raise DiagramError("duplicate line")
    for ln in d.lines:
        src, dst = by_id.get(ln.src), by_id.get(ln.dst)
        if src is None or ln.src_port not in src.out_ports:
            raise UnresolvedLine(f"line source {ln.src}.{ln.src_port} does not resolve")
        if dst is None or ln.dst_port not in dst.in_ports:
            raise UnresolvedLine(f"line target {ln.dst}.{ln.dst_port} does not resolve")


@dataclass(frozen=True)
class ImportResult:
    component_package: ComponentPackage
    terminology: TerminologyPackage
    created_terms: tuple[str, ...]


def _param_text(v: ParamValue) -> str:
    return v if isinstance(v, str) else json.dumps(v)


def import_block_diagram(
    d: BlockDiagram,
    type_dictionary: TerminologyPackage,
    package_id: str = "components",
) -> ImportResult:
    """Map blocks to components, ports to IO nodes and lines to relationships.

    Each block type names a Term of ``type_dictionary`` (the component's
    type term); missing Terms are added and reported in ``created_terms``. Block parameters are
    kept as tagged values.
    """
    check_diagram(d)
    known = {t.id for t in type_dictionary.terms}
    created: list[str] = []
    used: list[str] = []

    def component(b: Block, prefix: str) -> Component:
        cid = prefix + b.id
        if b.type not in known:
            known.add(b.type)
            created.append(b.type)
        if b.type not in used:
            used.append(b.type)
        subs = ()
        if b.subsystem is not None:
            subs = tuple(component(s, cid + "/") for s in b.subsystem.blocks)
        return Component(
            id=cid,
            name=(LangString(lang="en", text=b.name or b.id),),
            tagged_values=tuple(TaggedValue(key=k, value=_param_text(v)) for k, v in sorted(b.params.items())),
            component_type_term=b.type,
            inputs=tuple(IONode(name=p, direction="in") for p in b.in_ports),
            outputs=tuple(IONode(name=p, direction="out") for p in b.out_ports),
            subcomponents=subs,
        )

    def relationships(diagram: BlockDiagram, prefix: str) -> list[ComponentRelationship]:
        rels = []
        for ln in diagram.lines:
            src, dst = prefix + ln.src, prefix + ln.dst
            rels.append(ComponentRelationship(
                id=f"{src}.{ln.src_port}->{dst}.{ln.dst_port}",
                source=RelationshipEnd(component=src, node=ln.src_port),
                target=RelationshipEnd(component=dst, node=ln.dst_port),
            ))
        for b in diagram.blocks:
            if b.subsystem is not None:
                rels.extend(relationships(b.subsystem, prefix + b.id + "/"))
        return rels

    components = tuple(component(b, "") for b in d.blocks)
    rels = tuple(relationships(d, ""))

    terms = type_dictionary.terms + tuple(Term(id=t, name=(LangString(lang="en", text=t),)) for t in created)
    iface_id = type_dictionary.interfaces[0].id if type_dictionary.interfaces else f"{type_dictionary.id}.api"
    interfaces = list(type_dictionary.interfaces) or [PackageInterface(id=iface_id)]
    exports = tuple(dict.fromkeys(interfaces[0].exports + tuple(used)))
    interfaces[0] = interfaces[0].model_copy(update={"exports": exports})
    terminology = type_dictionary.model_copy(update={"terms": terms, "interfaces": tuple(interfaces)})

    bindings = (PackageBinding(interface=iface_id, provider=type_dictionary.id),) if components else ()
    cp = ComponentPackage(id=package_id, components=components, relationships=rels, bindings=bindings)
    return ImportResult(cp, terminology, tuple(created))
