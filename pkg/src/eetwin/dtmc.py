"""Per-component health monitoring with a discrete-time Markov chain.

Each monitored component carries a belief over hidden health states that is
updated by forward filtering (predict with the transition matrix, correct
with the in-range/out-of-range likelihood) on every telemetry sample.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

IN_RANGE = True
OUT_OF_RANGE = False

DEFAULT_P_OUT_OK = 0.05
DEFAULT_P_OUT_FAILED = 0.8
DEFAULT_THRESHOLD = 0.8


class InvalidStep(ValueError):
    pass


class InvalidModel(ValueError):
    pass


@dataclass(frozen=True)
class DtmcModel:
    states: tuple[str, ...]
    transition: np.ndarray
    obs_in_range: np.ndarray
    initial: np.ndarray
    failed_states: frozenset[str] = frozenset({"Failed"})

    def __post_init__(self):
        n = len(self.states)
        T = np.asarray(self.transition, dtype=float)
        obs = np.asarray(self.obs_in_range, dtype=float)
        init = np.asarray(self.initial, dtype=float)
        if T.shape != (n, n) or obs.shape != (n,) or init.shape != (n,):
            raise InvalidModel("shape mismatch between states, transition, observations and initial belief")
        if np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1.0) > 1e-12):
            raise InvalidModel("transition rows must be non-negative and sum to 1")
        if np.any((obs < 0) | (obs > 1)):
            raise InvalidModel("observation probabilities must lie in [0, 1]")
        if np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
            raise InvalidModel("initial belief must be a distribution")
        if not self.failed_states <= set(self.states):
            raise InvalidModel("failed states must be states of the chain")
        for name, arr in (("transition", T), ("obs_in_range", obs), ("initial", init)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def healthy_mask(self) -> np.ndarray:
        return np.array([s not in self.failed_states for s in self.states])

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DtmcModel":
        try:
            states = tuple(data["states"])
            return cls(
                states=states,
                transition=np.array(data["transition"], dtype=float),
                obs_in_range=np.array(data["obs_in_range"], dtype=float),
                initial=np.array(data["initial"], dtype=float),
                failed_states=frozenset(data.get("failed", ["Failed"])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidModel):
                raise
            raise InvalidModel(f"malformed DTMC document: {exc!r}") from None

    @classmethod
    def load(cls, path: str | Path) -> "DtmcModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        return {
            "states": list(self.states),
            "transition": self.transition.tolist(),
            "obs_in_range": self.obs_in_range.tolist(),
            "initial": self.initial.tolist(),
            "failed": sorted(self.failed_states),
        }


def failure_probability(fit: float, step_seconds: float) -> float:
    """Probability of failing within one step for a constant FIT rate."""
    rate = fit * 1e-9 / 3600.0
    return -math.expm1(-rate * step_seconds)


def two_state_model(
    p_fail: float,
    p_out_ok: float = DEFAULT_P_OUT_OK,
    p_out_failed: float = DEFAULT_P_OUT_FAILED,
    p_recover: float = 0.0,
) -> DtmcModel:
    return DtmcModel(
        states=("OK", "Failed"),
        transition=np.array([[1.0 - p_fail, p_fail], [p_recover, 1.0 - p_recover]]),
        obs_in_range=np.array([1.0 - p_out_ok, 1.0 - p_out_failed]),
        initial=np.array([1.0, 0.0]),
    )


def build_dtmc(
    component: Any,
    step_seconds: float,
    p_out_ok: float = DEFAULT_P_OUT_OK,
    p_out_failed: float = DEFAULT_P_OUT_FAILED,
    p_recover: float = 0.0,
) -> DtmcModel:
    """Two-state OK/Failed chain whose per-step failure probability follows
    from the component FIT: ``1 - exp(-fit * 1e-9 / 3600 * step_seconds)``."""
    if not step_seconds > 0:
        raise InvalidStep(f"step must be positive, got {step_seconds}")
    fit = float(getattr(component, "fit", component))
    if not fit >= 0:
        raise InvalidModel(f"FIT must be non-negative, got {fit}")
    return two_state_model(failure_probability(fit, step_seconds), p_out_ok, p_out_failed, p_recover)


@dataclass(frozen=True)
class DtmcBelief:
    component_id: str
    belief: tuple[float, ...]
    step_count: int = 0
    last_observation: bool | None = None
    degenerate: bool = False

    @classmethod
    def initial(cls, component_id: str, model: DtmcModel) -> "DtmcBelief":
        return cls(component_id, tuple(float(x) for x in model.initial))


def observe(model: DtmcModel, belief: DtmcBelief, in_range: bool) -> DtmcBelief:
    """One forward-filter step. A zero total likelihood keeps the belief and
    sets ``degenerate``."""
    predicted = np.asarray(belief.belief) @ model.transition
    likelihood = model.obs_in_range if in_range else 1.0 - model.obs_in_range
    joint = predicted * likelihood
    total = joint.sum()
    if not total > 0:
        return DtmcBelief(belief.component_id, belief.belief, belief.step_count + 1, in_range, True)
    posterior = joint / total
    return DtmcBelief(belief.component_id, tuple(float(x) for x in posterior), belief.step_count + 1, in_range)


def confidence(belief: DtmcBelief, model: DtmcModel | None = None) -> float:
    """Probability mass on healthy states (all but the last state without a model)."""
    b = np.asarray(belief.belief)
    if model is None:
        return float(b[:-1].sum())
    return float(b[model.healthy_mask].sum())


@dataclass(frozen=True)
class Directive:
    component_id: str
    confidence: float
    kind: str = "SHUTDOWN"

    @property
    def reason(self) -> str:
        return f"confidence of {self.component_id} fell to {self.confidence:.4f}"


def decide(belief: DtmcBelief, threshold: float = DEFAULT_THRESHOLD, model: DtmcModel | None = None) -> Directive | None:
    """SHUTDOWN exactly when confidence < threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    conf = confidence(belief, model)
    return Directive(belief.component_id, conf) if conf < threshold else None


def reachability(model: DtmcModel, k: int) -> float:
    """Probability of having visited a failed state within ``k`` steps."""
    if k < 0:
        raise ValueError("k must be non-negative")
    failed = ~model.healthy_mask
    T = model.transition.copy()
    T[failed] = 0.0
    T[np.ix_(failed, failed)] = np.eye(int(failed.sum()))
    x = model.initial.copy()
    for _ in range(k):
        x = x @ T
    return float(x[failed].sum())


@dataclass
class HealthMonitor:
    """Belief registry: one chain and belief per monitored component.

    A SHUTDOWN directive is returned once per breach; the component re-arms
    when its confidence is back at or above the threshold.
    """

    models: Mapping[str, DtmcModel]
    threshold: float = DEFAULT_THRESHOLD
    thresholds: Mapping[str, float] = field(default_factory=dict)
    beliefs: dict[str, DtmcBelief] = field(default_factory=dict)
    tripped: set[str] = field(default_factory=set)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        for cid, model in self.models.items():
            self.beliefs.setdefault(cid, DtmcBelief.initial(cid, model))

    def threshold_for(self, component_id: str) -> float:
        return self.thresholds.get(component_id, self.threshold)

    def confidence(self, component_id: str) -> float:
        return confidence(self.beliefs[component_id], self.models[component_id])

    def observe(self, component_id: str, in_range: bool) -> Directive | None:
        if component_id not in self.models:
            return None
        with self._lock:
            model = self.models[component_id]
            belief = observe(model, self.beliefs[component_id], in_range)
            self.beliefs[component_id] = belief
            directive = decide(belief, self.threshold_for(component_id), model)
            if directive is None:
                self.tripped.discard(component_id)
                return None
            if component_id in self.tripped:
                return None
            self.tripped.add(component_id)
            return directive

    @classmethod
    def for_components(
        cls, components: Sequence[Any], step_seconds: float, threshold: float = DEFAULT_THRESHOLD, **obs: float
    ) -> "HealthMonitor":
        return cls({c.id: build_dtmc(c, step_seconds, **obs) for c in components}, threshold)
