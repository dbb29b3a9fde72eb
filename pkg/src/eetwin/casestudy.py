"""The PWM-driven DC-motor speed loop used throughout the tests and docs.

The model is produced the same way a user would: import the block diagram,
then annotate the components with reliability, runtime and safety data.
"""

from __future__ import annotations

from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from .blockdiagram import BlockDiagram, import_block_diagram
from .plant import PlantConfig
from .reliability import PLANT_ELEMENT_TAG, ReliabilityTable, load_requirements
from .sdtm import (
    Activity,
    ArtifactPackage,
    ArtifactRecord,
    Component,
    DigitalTwinPackage,
    ExternalReference,
    FailureEffect,
    FailureMode,
    Function,
    IONode,
    LangString,
    PackageBinding,
    PackageInterface,
    SafetyMechanism,
    TaggedValue,
    default_terminology,
)

MODEL_ID = "motor-control"
COMPONENT_PACKAGE_ID = "motor-control.components"
D2P_ENDPOINT = "127.0.0.1:7402"

FIT = {"pwm": 50.0, "hbridge": 80.0, "motor": 120.0, "filter": 40.0, "pid": 30.0}
SIL = {"pwm": 2, "hbridge": 2, "motor": 2, "filter": 2, "pid": 2}
LEGAL_RANGES = {
    ("motor", "speed"): (-0.1, 2.2, "rad/s"),
    ("motor", "current"): (-25.0, 25.0, "A"),
    ("filter", "filtered"): (-0.1, 2.2, "rad/s"),
}
CREATED = datetime(2024, 1, 15, 9, 0, tzinfo=timezone.utc)


def data_path(name: str) -> Path:
    return Path(str(resources.files("eetwin") / "data" / name))


def diagram() -> BlockDiagram:
    return BlockDiagram.load(data_path("motor_control.diagram.json"))


def reliability_table() -> ReliabilityTable:
    return ReliabilityTable.load(data_path("reliability.csv"))


def requirements():
    return load_requirements(data_path("requirements.json"))


def plant_config() -> PlantConfig:
    return PlantConfig.load(data_path("plant.json"))


def _ranged(c: Component, nodes: tuple[IONode, ...]) -> tuple[IONode, ...]:
    out = []
    for n in nodes:
        spec = LEGAL_RANGES.get((c.id, n.name))
        if spec is not None:
            n = n.model_copy(update={"legal_range": spec[:2], "unit": spec[2]})
        out.append(n)
    return tuple(out)


def _failure_logic(cid: str) -> dict:
    """Inline failure modes and safety mechanisms, authored from the same
    fault mappings as the reliability table."""
    if cid == "hbridge":
        return {
            "failure_modes": (
                FailureMode(id="hbridge.open", name=(LangString(lang="en", text="open"),), fraction=0.5,
                            covered_by=("hbridge.drive-diagnostic",),
                            effects=(FailureEffect(id="hbridge.open.motor", affected_component="motor",
                                                   description="motor loses drive voltage"),)),
                FailureMode(id="hbridge.supply-sag", name=(LangString(lang="en", text="supply-sag"),),
                            fraction=0.3),
            ),
            "safety_mechanisms": (SafetyMechanism(id="hbridge.drive-diagnostic", diagnostic_coverage=0.9),),
        }
    if cid == "filter":
        return {
            "failure_modes": (
                FailureMode(id="filter.stuck", name=(LangString(lang="en", text="stuck"),), fraction=0.4,
                            covered_by=("filter.plausibility",),
                            effects=(FailureEffect(id="filter.stuck.pid", affected_component="pid",
                                                   description="controller sees a frozen speed"),)),
            ),
            "safety_mechanisms": (SafetyMechanism(id="filter.plausibility", diagnostic_coverage=0.99),),
        }
    return {}


def _annotate(c: Component) -> Component:
    tags = c.tagged_values + (TaggedValue(key=PLANT_ELEMENT_TAG, value=c.id),)
    update = {
        "fit": FIT[c.id],
        "safety_integrity_level": SIL[c.id],
        "safety_related": True,
        "inputs": _ranged(c, c.inputs),
        "outputs": _ranged(c, c.outputs),
        "functions": (Function(id=f"{c.id}.function", name=(LangString(lang="en", text=c.label),)),),
        **_failure_logic(c.id),
    }
    if c.id in ("motor", "filter"):
        update["dynamic"] = True
    if c.id == "motor":
        update["hazard_sink"] = True
        update["endpoint"] = D2P_ENDPOINT
        tags += (TaggedValue(key="d2p", value="true"),)
        update["implementation_constraints"] = ("sum(failureModes.fraction) <= 1.0",)
    update["tagged_values"] = tags
    return c.model_copy(update=update)


def build_case_study() -> DigitalTwinPackage:
    imported = import_block_diagram(diagram(), default_terminology(), COMPONENT_PACKAGE_ID)
    cp = imported.component_package
    cp = cp.model_copy(update={
        "name": (LangString(lang="en", text="Speed control loop"),),
        "components": tuple(_annotate(c) for c in cp.components),
        "interfaces": (PackageInterface(id=f"{COMPONENT_PACKAGE_ID}.api", exports=("motor", "filter")),),
    })
    artifacts = ArtifactPackage(
        id="motor-control.artifacts",
        name=(LangString(lang="en", text="Design artifacts"),),
        artifacts=(ArtifactRecord(id="design-model", version="1.0", creation_date=CREATED,
                                  citations=("motor",)),),
        activities=(Activity(id="commissioning", start_time=CREATED,
                             end_time=datetime(2024, 1, 16, 17, 0, tzinfo=timezone.utc)),),
        bindings=(PackageBinding(interface=f"{COMPONENT_PACKAGE_ID}.api", provider=COMPONENT_PACKAGE_ID),),
    )
    return DigitalTwinPackage(
        id=MODEL_ID,
        name=(LangString(lang="en", text="PWM DC motor speed control"),
              LangString(lang="de", text="PWM-Drehzahlregelung eines Gleichstrommotors")),
        descriptions=("Five-block closed speed loop with feedback filter.",),
        implementation_constraints=("count(componentPackages[0].components) = 5",),
        external_references=(
            ExternalReference(location="reliability.csv", model_type="reliability-table",
                              constraint="count(rows) > 0"),
            ExternalReference(location="requirements.json", model_type="requirements"),
        ),
        terminology_packages=(imported.terminology,),
        artifact_packages=(artifacts,),
        component_packages=(cp,),
        interfaces=(PackageInterface(id="motor-control.api", exports=("motor", "filter")),),
    )
