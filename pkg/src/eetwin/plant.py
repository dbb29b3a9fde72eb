"""Discrete-time simulation of a PWM-driven DC motor speed-control loop.

The loop is PID controller -> PWM generator -> H-bridge -> DC motor ->
first-order feedback filter -> PID. PWM and H-bridge are modelled by their
average value: the armature sees ``driveGain * duty * supplyVoltage``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np


class SimulationDiverged(RuntimeError):
    pass


class UnknownFaultKey(KeyError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PlantConfig:
    supply_voltage: float = 24.0
    resistance: float = 1.0
    inductance: float = 0.5
    torque_constant: float = 0.01
    back_emf_constant: float = 0.01
    inertia: float = 0.01
    damping: float = 0.1
    filter_tau: float = 0.05
    kp: float = 1.0
    ki: float = 3.0
    kd: float = 0.01
    setpoint: float = 2.0
    dt: float = 1e-3
    duration: float = 5.0
    drive_gain: float = 1.0
    sensor_stuck: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("resistance", "inductance", "inertia", "filter_tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.drive_gain <= 1.0:
            raise ValueError("drive_gain must lie in [0, 1]")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def to_dict(self) -> dict[str, Any]:
        return {_CAMEL[f.name]: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PlantConfig":
        return inject_fault(cls(), data)

    @classmethod
    def load(cls, path: str | Path) -> "PlantConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(p.title() for p in rest)


_CAMEL = {f.name: _camel(f.name) for f in dataclasses.fields(PlantConfig)}

# short physics symbols and camelCase names both address config fields
FAULT_KEYS: dict[str, str] = {
    "V": "supply_voltage",
    "R": "resistance",
    "L": "inductance",
    "Kt": "torque_constant",
    "Ke": "back_emf_constant",
    "J": "inertia",
    "b": "damping",
    "tau_f": "filter_tau",
    "Kp": "kp",
    "Ki": "ki",
    "Kd": "kd",
    "omega_ref": "setpoint",
}
FAULT_KEYS.update({camel: name for name, camel in _CAMEL.items()})
FAULT_KEYS.update({name: name for name in _CAMEL})


def inject_fault(config: PlantConfig, fault_mapping: Mapping[str, Any]) -> PlantConfig:
    """Return a copy of ``config`` with the fault overrides applied."""
    changes = {}
    for key, value in fault_mapping.items():
        try:
            name = FAULT_KEYS[key]
        except KeyError:
            raise UnknownFaultKey(key) from None
        changes[name] = bool(value) if name == "sensor_stuck" else float(value)
    return dataclasses.replace(config, **changes)


@dataclass(frozen=True)
class PlantState:
    t: float = 0.0
    current: float = 0.0
    omega: float = 0.0
    omega_f: float = 0.0
    integral: float = 0.0
    prev_error: float = 0.0
    duty: float = 0.0

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in dataclasses.astuple(self))


def _clamp(x: float) -> float:
    return -1.0 if x < -1.0 else 1.0 if x > 1.0 else x


def step(config: PlantConfig, state: PlantState) -> PlantState:
    """Advance the closed loop by one control period ``config.dt``."""
    c, s = config, state
    dt = c.dt
    error = c.setpoint - s.omega_f
    derivative = (error - s.prev_error) / dt
    integral = s.integral + error * dt
    # conditional integration: freeze the accumulator while saturated
    if abs(c.kp * error + c.ki * integral + c.kd * derivative) > 1.0:
        integral = s.integral
    duty = _clamp(c.kp * error + c.ki * integral + c.kd * derivative)
    v_arm = c.drive_gain * duty * c.supply_voltage

    # RL armature: exact update for frozen v_arm and omega, stable for any R/L
    i_inf = (v_arm - c.back_emf_constant * s.omega) / c.resistance
    current = i_inf + (s.current - i_inf) * math.exp(-c.resistance * dt / c.inductance)
    omega = s.omega + dt * (c.torque_constant * s.current - c.damping * s.omega) / c.inertia
    omega_f = s.omega_f if c.sensor_stuck else s.omega_f + dt * (s.omega - s.omega_f) / c.filter_tau

    new = PlantState(s.t + dt, current, omega, omega_f, integral, error, duty)
    if not new.is_finite():
        raise SimulationDiverged(f"non-finite plant state at t={new.t:.6g}")
    return new


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    omega: np.ndarray
    omega_f: np.ndarray
    current: np.ndarray
    duty: np.ndarray
    setpoint: float = 0.0

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.setpoint == other.setpoint and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("t", "omega", "omega_f", "current", "duty")
        )

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "omega", "omega_f", "i", "duty"])
            for row in zip(self.t, self.omega, self.omega_f, self.current, self.duty):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path: str | Path, setpoint: float = 0.0) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(*(data[:, k].copy() for k in range(5)), setpoint=setpoint)


def run(config: PlantConfig, initial: PlantState | None = None) -> Trajectory:
    """Simulate ``config.duration`` seconds; the first sample is the initial state."""
    state = initial or PlantState()
    n = config.n_steps
    rows = np.empty((n + 1, 5))
    rows[0] = (state.t, state.omega, state.omega_f, state.current, state.duty)
    for k in range(1, n + 1):
        state = step(config, state)
        rows[k] = (k * config.dt + rows[0, 0], state.omega, state.omega_f, state.current, state.duty)
    return Trajectory(*(rows[:, j].copy() for j in range(5)), setpoint=config.setpoint)


@dataclass(frozen=True)
class Criterion:
    """Speed tolerance over the trailing fraction of a run."""

    tolerance: float = 0.05
    window: float = 0.2

    def window_slice(self, n: int) -> slice:
        start = min(n - 1, int(math.floor(n * (1.0 - self.window))))
        return slice(max(start, 0), n)


@dataclass(frozen=True)
class Classification:
    hazardous: bool
    deviation: float


def steady_state_error(traj: Trajectory, setpoint: float | None = None, window: float = 0.2) -> float:
    """Max of ``|omega - setpoint| / |setpoint|`` over the trailing window."""
    ref = traj.setpoint if setpoint is None else setpoint
    sl = Criterion(window=window).window_slice(len(traj))
    err = np.abs(traj.omega[sl] - ref)
    return float(err.max() / abs(ref)) if ref != 0 else float(err.max())


def classify_trajectory(nominal: Trajectory, test: Trajectory, criterion: Criterion = Criterion()) -> Classification:
    """Compare a faulted run against the nominal one on the same time grid.

    The deviation is the largest speed error relative to the nominal speed
    inside the evaluation window; the run is hazardous when it exceeds the
    criterion tolerance.
    """
    if len(nominal) != len(test) or not np.allclose(nominal.t, test.t, rtol=0, atol=1e-12):
        raise GridMismatch("trajectories are sampled on different grids")
    sl = criterion.window_slice(len(nominal))
    ref = np.abs(nominal.omega[sl])
    scale = np.maximum(ref, 1e-12)
    deviation = float(np.max(np.abs(test.omega[sl] - nominal.omega[sl]) / scale))
    return Classification(hazardous=deviation > criterion.tolerance, deviation=deviation)


SIGNALS = ("omega", "omega_f", "current", "duty")


def signal_value(state: PlantState, signal: str) -> float:
    if signal not in SIGNALS:
        raise KeyError(signal)
    return getattr(state, signal)
