"""Command-line front end: ``eetwin <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .blockdiagram import BlockDiagram, DiagramError, import_block_diagram
from .codegen import MissingEndpoint, generate_connectors
from .dataflow import serve_p2d
from .diffmerge import ApplyError, ConflictReport, diff, merge
from .document import ModelSyntaxError, dumps, load_model
from .dtmc import HealthMonitor
from .plant import (
    Criterion,
    PlantConfig,
    SimulationDiverged,
    UnknownFaultKey,
    classify_trajectory,
    inject_fault,
    run,
    steady_state_error,
)
from .plantnet import ConnectionLost, PlantServer, ScheduledFault
from .reliability import (
    ReliabilityError,
    ReliabilityTable,
    check_requirements,
    load_requirements,
    parse_fault_mapping,
    run_fmea_graph,
    run_fmea_sim,
)
from .sdtm import DigitalTwinPackage, SdtmError, TerminologyPackage, default_terminology
from .store import StorageError, TwinStore, UnknownComponent
from .timeutil import parse_rfc3339, to_rfc3339
from .validation import ValidationFailed, validate

log = logging.getLogger("eetwin")

EX_OK = 0
EX_INTERNAL = 1
EX_INVALID = 2
EX_REQUIREMENT = 3
EX_CONFLICT = 4
EX_USAGE = 64
EX_DATAERR = 65
EX_NOINPUT = 66
EX_UNAVAILABLE = 69
EX_CANTCREAT = 73

EXIT_CODES = {
    EX_OK: "success",
    EX_INTERNAL: "internal error",
    EX_INVALID: "model or diagram failed validation",
    EX_REQUIREMENT: "at least one requirement failed",
    EX_CONFLICT: "merge conflict",
    EX_USAGE: "bad command line or fault specification",
    EX_DATAERR: "input data is malformed or names something unknown",
    EX_NOINPUT: "input file or store missing",
    EX_UNAVAILABLE: "network endpoint unavailable",
    EX_CANTCREAT: "output cannot be written",
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _emit(args: argparse.Namespace, human: str, structured: Any) -> None:
    if args.format == "structured":
        sys.stdout.write(json.dumps(structured, indent=2, sort_keys=True) + "\n")
    elif human:
        sys.stdout.write(human if human.endswith("\n") else human + "\n")


def _need(path: str | None, what: str) -> Path:
    if not path:
        raise CliError(EX_USAGE, f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(EX_NOINPUT, f"{what} {p} does not exist")
    return p


def _write(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(EX_CANTCREAT, f"cannot write {path}: {exc}") from None


def _load(path: str | None, what: str = "model") -> DigitalTwinPackage:
    return load_model(_need(path, what))


def _store_dir(args: argparse.Namespace) -> str | None:
    return os.environ.get("TWIN_STORE") or args.store


def _violations_text(violations) -> str:
    return "\n".join(f"{v.element_id}: {v.rule}: {v.message}" for v in violations)


# -- subcommands ----------------------------------------------------------------

def cmd_import(args: argparse.Namespace) -> int:
    d = BlockDiagram.load(_need(args.diagram, "diagram"))
    if args.terms:
        terms = TerminologyPackage.model_validate_json(_need(args.terms, "terms").read_text(encoding="utf-8"))
    else:
        terms = default_terminology()
    result = import_block_diagram(d, terms, f"{args.id}.components")
    pkg = DigitalTwinPackage(id=args.id, terminology_packages=(result.terminology,),
                             component_packages=(result.component_package,))
    violations = validate(pkg)
    if violations:
        sys.stderr.write(_violations_text(violations) + "\n")
        return EX_INVALID
    if args.out:
        _write(args.out, dumps(pkg))
    else:
        sys.stdout.write(dumps(pkg))
    cp = result.component_package
    log.info("imported %d components, %d relationships; new terms: %s",
             sum(1 for _ in cp.all_components()), len(cp.relationships), ", ".join(result.created_terms) or "none")
    return EX_OK


def cmd_validate(args: argparse.Namespace) -> int:
    pkg = _load(args.model)
    violations = validate(pkg)
    _emit(args, _violations_text(violations) or "model is well-formed",
          [{"element": v.element_id, "rule": v.rule, "message": v.message} for v in violations])
    return EX_INVALID if violations else EX_OK


def cmd_fmea(args: argparse.Namespace) -> int:
    pkg = _load(args.model)
    table = ReliabilityTable.load(_need(args.table, "reliability table")) if args.table else None
    if args.mode == "sim":
        config = PlantConfig.load(_need(args.config, "plant config")) if args.config else PlantConfig()
        report = run_fmea_sim(pkg, table, config, Criterion(tolerance=args.tolerance))
    else:
        report = run_fmea_graph(pkg, table)
    doc = report.to_dict()
    human = report.to_text()
    code = EX_OK
    if args.requirements:
        results = check_requirements(report, load_requirements(_need(args.requirements, "requirements")))
        doc["requirements"] = [{"target": r.requirement.target_id, "metric": r.requirement.metric,
                                "threshold": r.requirement.threshold, "actual": r.actual, "passed": r.passed}
                               for r in results]
        human += "".join(f"{'PASS' if r.passed else 'FAIL'} {r.requirement.target_id} "
                         f"SPFM {r.actual:.6f} >= {r.requirement.threshold}\n" for r in results)
        if not all(r.passed for r in results):
            code = EX_REQUIREMENT
    if args.out:
        _write(args.out + ".json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
        _write(args.out + ".txt", human)
    _emit(args, human, doc)
    return code


def cmd_simulate(args: argparse.Namespace) -> int:
    config = PlantConfig.load(_need(args.config, "plant config")) if args.config else PlantConfig()
    if args.duration is not None:
        config = replace(config, duration=args.duration)
    nominal = run(config)
    summary: dict[str, Any] = {"steps": config.n_steps, "finalOmega": float(nominal.omega[-1]),
                               "steadyStateError": steady_state_error(nominal)}
    traj = nominal
    if args.fault:
        try:
            faulted_cfg = inject_fault(config, parse_fault_mapping(args.fault))
        except UnknownFaultKey as exc:
            raise CliError(EX_USAGE, f"unknown fault key {exc.args[0]!r}") from None
        except (ReliabilityError, ValueError) as exc:
            raise CliError(EX_USAGE, f"bad fault {args.fault!r}: {exc}") from None
        traj = run(faulted_cfg)
        verdict = classify_trajectory(nominal, traj, Criterion(tolerance=args.tolerance))
        summary.update({"fault": args.fault, "faultedFinalOmega": float(traj.omega[-1]),
                        "faultedSteadyStateError": steady_state_error(traj),
                        "hazardous": verdict.hazardous, "deviation": verdict.deviation})
    if args.out:
        try:
            traj.write_csv(args.out)
        except OSError as exc:
            raise CliError(EX_CANTCREAT, f"cannot write {args.out}: {exc}") from None
    human = "\n".join(f"{k}: {v}" for k, v in summary.items())
    if "hazardous" in summary:
        human += f"\nclassification: {'hazardous' if summary['hazardous'] else 'benign'}"
    _emit(args, human, summary)
    return EX_OK


def _wait(duration: float | None) -> None:
    stop = threading.Event()
    previous = signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait(duration)
    except KeyboardInterrupt:
        pass
    finally:
        signal.signal(signal.SIGTERM, previous)


def cmd_serve(args: argparse.Namespace) -> int:
    pkg = _load(args.model)
    store_dir = _store_dir(args)
    if not store_dir:
        raise CliError(EX_USAGE, "--store (or TWIN_STORE) is required")
    manifest, _ = generate_connectors(pkg)
    store = TwinStore(store_dir)
    try:
        store.commit(pkg, datetime.now(timezone.utc), f"serve {pkg.id}")
        comps = [pkg.component(e.component_id) for e in manifest.entries]
        monitor = HealthMonitor.for_components(comps, args.step, args.threshold)
        try:
            server = serve_p2d(manifest, store, monitor, args.bind, args.plant)
        except OSError as exc:
            raise CliError(EX_UNAVAILABLE, f"cannot bind {args.bind}: {exc}") from None
        log.info("P2D listening on %s:%d, D2P to %s", server.server_address[0], server.port, args.plant)
        try:
            _wait(args.duration)
        finally:
            server.stop()
        summary = {"counters": dict(server.counters),
                   "directives": [{"component": d.message.component_id, "reason": d.message.reason,
                                   "acknowledged": d.ack is not None, "error": d.error} for d in server.directives]}
        _emit(args, "\n".join([f"{k}: {v}" for k, v in sorted(server.counters.items())]
                              + [f"SHUTDOWN {d['component']}: {d['reason']}" for d in summary["directives"]]),
              summary)
    finally:
        store.close()
    return EX_OK


def _fault_schedule(items: Sequence[str] | None) -> list[ScheduledFault]:
    out = []
    for item in items or ():
        at, sep, spec = item.partition("@")
        if not sep:
            raise CliError(EX_USAGE, f"fault schedule {item!r} is not TIME@key=value;...")
        try:
            out.append(ScheduledFault(float(at), parse_fault_mapping(spec)))
        except (ValueError, ReliabilityError) as exc:
            raise CliError(EX_USAGE, f"bad fault schedule {item!r}: {exc}") from None
    return out


def cmd_plant(args: argparse.Namespace) -> int:
    config = PlantConfig.load(_need(args.config, "plant config")) if args.config else PlantConfig()
    if args.duration is not None:
        config = replace(config, duration=args.duration)
    faults = _fault_schedule(args.fault_at)
    for f in faults:
        try:
            inject_fault(config, f.mapping)
        except UnknownFaultKey as exc:
            raise CliError(EX_USAGE, f"unknown fault key {exc.args[0]!r}") from None
    try:
        plant = PlantServer(config, args.twin, args.plant_bind, time_scale=args.time_scale, faults=faults,
                            connect_attempts=args.attempts)
    except OSError as exc:
        raise CliError(EX_UNAVAILABLE, f"cannot bind {args.plant_bind}: {exc}") from None
    with plant:
        try:
            result = plant.run()
        except ConnectionLost as exc:
            raise CliError(EX_UNAVAILABLE, str(exc)) from None
    summary = {"steps": result.steps, "samplesSent": len(result.sent), "halted": result.halted,
               "haltLatencySteps": result.halt_latency_steps}
    _emit(args, "\n".join(f"{k}: {v}" for k, v in summary.items()), summary)
    return EX_OK


def _when(text: str | None, default: datetime) -> datetime:
    if text is None:
        return default
    try:
        return parse_rfc3339(text)
    except ValueError as exc:
        raise CliError(EX_USAGE, f"bad timestamp {text!r}: {exc}") from None


def cmd_query(args: argparse.Namespace) -> int:
    store_dir = _store_dir(args)
    if not store_dir:
        raise CliError(EX_USAGE, "--store (or TWIN_STORE) is required")
    if not (Path(store_dir) / "snapshots.jsonl").exists():
        raise CliError(EX_NOINPUT, f"no twin store at {store_dir}")
    t0 = _when(args.t0, datetime.min.replace(tzinfo=timezone.utc))
    t1 = _when(args.t1, datetime.max.replace(tzinfo=timezone.utc))
    if t0 > t1:
        raise CliError(EX_USAGE, "--from must not be after --to")
    with TwinStore(store_dir) as store:
        series = store.query_timeseries(args.component, args.node, t0, t1)
    rows = [(to_rfc3339(t, millis=True), v) for t, v in series.samples]
    _emit(args, "\n".join(f"{t},{v!r}" for t, v in rows),
          {"component": args.component, "node": args.node, "samples": [[t, v] for t, v in rows]})
    return EX_OK


def cmd_codegen(args: argparse.Namespace) -> int:
    pkg = _load(args.model)
    manifest, stubs = generate_connectors(pkg)
    if args.out:
        _write(args.out, manifest.dumps())
    if args.stubs:
        _write(args.stubs, stubs)
    _emit(args, stubs if not args.out else f"{len(manifest)} dynamic component(s) -> {args.out}",
          manifest.to_dict())
    return EX_OK


def cmd_diff(args: argparse.Namespace) -> int:
    a, b = _load(args.a, "first model"), _load(args.b, "second model")
    cs = diff(a, b)
    doc = cs.to_dict()
    lines = [f"+ {eid}" for eid in sorted(cs.added)] + [f"- {eid}" for eid in sorted(cs.removed)]
    lines += [f"~ {m.element_id}.{m.field}: {m.old!r} -> {m.new!r}" for m in cs.modified]
    _emit(args, "\n".join(lines) or "no differences", doc)
    return EX_OK


def cmd_merge(args: argparse.Namespace) -> int:
    base, a, b = _load(args.base, "base model"), _load(args.a, "first model"), _load(args.b, "second model")
    result = merge(a, b, base)
    if isinstance(result, ConflictReport):
        doc = {"conflicts": [{"element": c.element_id, "field": c.field, "a": repr(c.a_value), "b": repr(c.b_value)}
                             for c in result.conflicts],
               "violations": [{"element": v.element_id, "rule": v.rule, "message": v.message}
                              for v in result.violations]}
        human = "\n".join([f"conflict {c.element_id}.{c.field}: {c.a_value!r} vs {c.b_value!r}"
                           for c in result.conflicts] + [_violations_text(result.violations)])
        _emit(args, human.strip(), doc)
        return EX_CONFLICT
    if args.out:
        _write(args.out, dumps(result))
    else:
        sys.stdout.write(dumps(result))
    return EX_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # global options are accepted before or after the subcommand; the
    # subcommand copy must not reset what the top level already parsed
    def global_options(p: argparse.ArgumentParser, default: Any) -> argparse.ArgumentParser:
        p.add_argument("--format", choices=("human", "structured"),
                       default="human" if default is None else default)
        p.add_argument("-v", "--verbose", action="store_true", default=False if default is None else default)
        return p

    common = global_options(_Parser(add_help=False), argparse.SUPPRESS)
    parser = global_options(_Parser(prog="eetwin", description="Structured digital twin toolkit."), None)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, fn: Callable[[argparse.Namespace], int], help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, parents=[common])
        p.set_defaults(func=fn)
        return p

    p = add("import", cmd_import, "import a block diagram into a model document")
    p.add_argument("diagram")
    p.add_argument("--terms", help="terminology package JSON used as type dictionary")
    p.add_argument("--id", default="model", help="id of the created model")
    p.add_argument("-o", "--out")

    p = add("validate", cmd_validate, "check a model for well-formedness")
    p.add_argument("--model", required=True)

    p = add("fmea", cmd_fmea, "run FMEA and compute SPFM")
    p.add_argument("--model", required=True)
    p.add_argument("--table")
    p.add_argument("--mode", choices=("graph", "sim"), default="graph")
    p.add_argument("--requirements")
    p.add_argument("--config", help="plant config for sim mode")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("-o", "--out", help="report path prefix (.json and .txt are written)")

    p = add("simulate", cmd_simulate, "simulate the plant, optionally with a fault")
    p.add_argument("--config")
    p.add_argument("--fault", help="fault mapping, e.g. driveGain=0 or R=1e6;L=0.4")
    p.add_argument("--duration", type=float)
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("-o", "--out", help="trajectory CSV")

    p = add("serve", cmd_serve, "run the twin: P2D receiver, monitor and D2P sender")
    p.add_argument("--model", required=True)
    p.add_argument("--store")
    p.add_argument("--bind", default="0.0.0.0:7401")
    p.add_argument("--plant", default="127.0.0.1:7402")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--step", type=float, default=0.01, help="seconds per monitor step")
    p.add_argument("--duration", type=float, help="stop after this many seconds")

    p = add("plant", cmd_plant, "run the simulated plant against a twin")
    p.add_argument("--config")
    p.add_argument("--twin", default="127.0.0.1:7401")
    p.add_argument("--plant-bind", default="127.0.0.1:7402")
    p.add_argument("--time-scale", type=float, default=1.0, help="0 runs as fast as possible")
    p.add_argument("--duration", type=float)
    p.add_argument("--fault-at", action="append", metavar="T@k=v;...")
    p.add_argument("--attempts", type=int, default=5)

    p = add("query", cmd_query, "print the recorded values of an IO node")
    p.add_argument("component")
    p.add_argument("node")
    p.add_argument("--store")
    p.add_argument("--from", dest="t0")
    p.add_argument("--to", dest="t1")

    p = add("codegen", cmd_codegen, "generate the connector manifest")
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--out")
    p.add_argument("--stubs")

    p = add("diff", cmd_diff, "compare two models")
    p.add_argument("a")
    p.add_argument("b")

    p = add("merge", cmd_merge, "three-way merge of two models against their base")
    p.add_argument("base")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("-o", "--out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"eetwin: {exc}\n")
        return exc.code
    except FileNotFoundError as exc:
        sys.stderr.write(f"eetwin: {exc}\n")
        return EX_NOINPUT
    except ValidationFailed as exc:
        sys.stderr.write(_violations_text(exc.violations) + "\n")
        return EX_INVALID
    except (DiagramError, ModelSyntaxError, SdtmError) as exc:
        sys.stderr.write(f"eetwin: {exc}\n")
        return EX_INVALID
    except (UnknownComponent, ReliabilityError, ApplyError, MissingEndpoint, SimulationDiverged,
            json.JSONDecodeError, ValueError, KeyError) as exc:
        sys.stderr.write(f"eetwin: {type(exc).__name__}: {exc}\n")
        return EX_DATAERR
    except StorageError as exc:
        sys.stderr.write(f"eetwin: {exc}\n")
        return EX_CANTCREAT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        sys.stderr.write(f"eetwin: internal error: {exc}\n")
        return EX_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
