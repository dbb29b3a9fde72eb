"""Connector manifest generation for dynamic components."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .sdtm import DigitalTwinPackage
from .validation import is_d2p_sender

P2D_RECEIVER = "p2d-receiver"
D2P_SENDER = "d2p-sender"


class MissingEndpoint(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    name: str
    direction: str
    legal_range: tuple[float, float] | None = None

    def in_range(self, value: float) -> bool:
        if self.legal_range is None:
            return True
        return self.legal_range[0] <= value <= self.legal_range[1]


@dataclass(frozen=True)
class ConnectorEntry:
    component_id: str
    roles: tuple[str, ...]
    endpoint: str | None
    nodes: tuple[NodeSpec, ...]

    def node(self, name: str) -> NodeSpec | None:
        for n in self.nodes:
            if n.name == name:
                return n
        return None


@dataclass(frozen=True)
class ConnectorManifest:
    entries: tuple[ConnectorEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, component_id: str) -> ConnectorEntry | None:
        for e in self.entries:
            if e.component_id == component_id:
                return e
        return None

    def to_dict(self) -> dict[str, Any]:
        return {"components": [
            {
                "component": e.component_id,
                "roles": list(e.roles),
                "endpoint": e.endpoint,
                "nodes": [{"name": n.name, "direction": n.direction,
                           "legalRange": list(n.legal_range) if n.legal_range else None} for n in e.nodes],
            }
            for e in self.entries
        ]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ConnectorManifest":
        entries = []
        for c in data.get("components", []):
            nodes = tuple(NodeSpec(n["name"], n["direction"],
                                   tuple(n["legalRange"]) if n.get("legalRange") else None) for n in c["nodes"])
            entry = ConnectorEntry(c["component"], tuple(c["roles"]), c.get("endpoint"), nodes)
            if D2P_SENDER in entry.roles and not entry.endpoint:
                raise MissingEndpoint(entry.component_id)
            entries.append(entry)
        return cls(tuple(entries))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ConnectorManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_connectors(pkg: DigitalTwinPackage) -> tuple[ConnectorManifest, str]:
    """Collect the dynamic components into a manifest plus a readable stub listing."""
    entries = []
    for comp in pkg.all_components():
        if not comp.dynamic:
            continue
        roles = [P2D_RECEIVER]
        if is_d2p_sender(comp):
            if not comp.endpoint:
                raise MissingEndpoint(comp.id)
            roles.append(D2P_SENDER)
        nodes = tuple(NodeSpec(n.name, n.direction, n.legal_range) for n in comp.io_nodes)
        entries.append(ConnectorEntry(comp.id, tuple(roles), comp.endpoint, nodes))
    manifest = ConnectorManifest(tuple(entries))
    return manifest, render_stubs(pkg.id, manifest)


def _ident(text: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in text)


def render_stubs(model_id: str, manifest: ConnectorManifest) -> str:
    lines = [f"# Connector handlers for model {model_id!r}.",
             "# Reference listing only; the runtime is driven by the manifest.", ""]
    for e in manifest.entries:
        lines.append(f"# component {e.component_id} roles={','.join(e.roles)}"
                     + (f" endpoint={e.endpoint}" if e.endpoint else ""))
        for n in e.nodes:
            rng = f"legal range [{n.legal_range[0]:g}, {n.legal_range[1]:g}]" if n.legal_range else "no legal range"
            lines.append(f"def on_{_ident(e.component_id)}__{_ident(n.name)}(value, ts):  # {n.direction}, {rng}")
            lines.append("    ...")
        if D2P_SENDER in e.roles:
            lines.append(f"def send_{_ident(e.component_id)}__shutdown(reason):  # -> {e.endpoint}")
            lines.append("    ...")
        lines.append("")
    return "\n".join(lines)
