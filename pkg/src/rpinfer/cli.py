"""``rpinfer`` command line: ingest, infer, validate, synth, report.

Exit codes: 0 success, 1 usage error (bad flags, missing input files),
2 data error (malformed or inconsistent input).

Every JSON output names a sibling ``*.manifest.json`` holding the command,
config snapshot, input/output digests and timestamps. Timestamps live only
in the manifest so that the outputs themselves are byte-reproducible.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .inference import InferenceResult, Measurements, Step, Verdict, run_pipeline
from .ingest import IngestError, MemberInterface, SourceTag, dump_world, load_documents, load_world, parse_world
from .measurements import MeasurementError, read_alias_sets_jsonl, read_pings_csv, read_traceroutes_jsonl
from .report import build_report, feasibility_geojson, write_report
from .synth import SynthConfigError, generate, load_synth_config, write_scenario
from .validation import compute_metrics, expand_labels, per_step_metrics, rollup_members

log = logging.getLogger("rpinfer")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps({"level": record.levelname, "logger": record.name, "msg": record.getMessage()})


@dataclasses.dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict[str, Any]
    inputs: dict[str, str]
    outputs: dict[str, str] = dataclasses.field(default_factory=dict)
    tool_version: str = __version__
    started_at: str = ""
    finished_at: str = ""

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _digests(paths: Sequence[Path]) -> dict[str, str]:
    out = {}
    for p in paths:
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    out[str(f)] = sha256(f)
        else:
            out[str(p)] = sha256(p)
    return out


def _require(*paths: str | Path | None) -> list[Path]:
    out = []
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        if not p.exists():
            raise UsageError(f"input not found: {p}")
        out.append(p)
    return out


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _dump(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc


def _precedence(cfg: PipelineConfig) -> dict[SourceTag, int]:
    try:
        return {SourceTag(k): v for k, v in cfg.source_precedence.items()}
    except ValueError as exc:
        raise DataError(f"source_precedence: {exc}") from exc


# --- subcommands -------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> tuple[list[Path], list[Path], dict]:
    inputs = _require(args.inputs, args.config)
    cfg = load_config(args.config)
    world = parse_world(load_documents(args.inputs), _precedence(cfg))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_world(world, out)
    report_path = Path(args.report) if args.report else out.with_name("ingest_report.json")
    _dump(report_path, {"manifest": _manifest_path(out).name, **world.report.to_dict()})
    n_q = len(world.report.quarantine)
    if n_q:
        log.warning("%d records quarantined; see %s", n_q, report_path)
    return inputs, [out, report_path], cfg.to_dict()


def cmd_infer(args: argparse.Namespace) -> tuple[list[Path], list[Path], dict]:
    inputs = _require(args.world, args.pings, args.traces, args.aliases, args.config)
    cfg = load_config(args.config)
    world = load_world(args.world)
    meas = Measurements(
        pings=read_pings_csv(args.pings),
        traceroutes=read_traceroutes_jsonl(args.traces) if args.traces else [],
        alias_sets=read_alias_sets_jsonl(args.aliases) if args.aliases else [],
    )
    try:
        out = run_pipeline(world, meas, cfg, args.ixp)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    for d in out.diagnostics:
        log.info("%s", d)
    path = Path(args.out)
    selected = sorted(args.ixp) if args.ixp else sorted(world.ixps)
    _dump(path, {
        "manifest": _manifest_path(path).name,
        "ixps": selected,
        "config": cfg.to_dict(),
        "results": [r.to_json() for r in out.results],
        "members": [{"asn": m.asn, "member_type": m.member_type.value} for m in out.members],
        "baseline": [
            {"ip": ip, "ixp_id": ixp, "verdict": v.value} for (ip, ixp), v in sorted(out.baseline.items())
        ],
        "vp_status": {k: dataclasses.asdict(v) for k, v in sorted(out.vp_status.items())},
        "diagnostics": out.diagnostics,
    })
    # advisory markers are informational only and never change a verdict
    advisory_path = path.with_name(path.stem + ".advisory.json")
    _dump(advisory_path, {
        "manifest": _manifest_path(path).name,
        "above_remote_advisory": [r.interface.ip for r in out.results if r.evidence.get("above_remote_advisory")],
    })
    return inputs, [path, advisory_path], cfg.to_dict()


def _labels_from(doc: Any) -> list[Mapping[str, Any]]:
    if isinstance(doc, Mapping):
        doc = doc.get("records", doc.get("labels"))
    if not isinstance(doc, list):
        raise DataError("labels file must hold a list of label records or a labels document")
    return doc


def cmd_validate(args: argparse.Namespace) -> tuple[list[Path], list[Path], dict]:
    inputs = _require(args.results, args.labels)
    results = _load_json(Path(args.results))
    rows = results.get("results")
    if rows is None:
        raise DataError(f"{args.results}: no 'results' array")
    ifaces = [(r["ip"], int(r["asn"]), r["ixp_id"]) for r in rows]
    try:
        labels = expand_labels(_labels_from(_load_json(Path(args.labels))), ifaces)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.labels}: {exc}") from exc
    # labels for interfaces outside the inferred set cannot be scored
    scope = {(ip, ixp) for ip, _, ixp in ifaces}
    labels = {k: v for k, v in labels.items() if k in scope}
    inferred = {(r["ip"], r["ixp_id"]): r["verdict"] for r in rows}
    baseline = {(b["ip"], b["ixp_id"]): b["verdict"] for b in results.get("baseline", [])}

    attributed = [
        InferenceResult(MemberInterface(r["ip"], int(r["asn"]), r["ixp_id"], r.get("port_capacity")),
                        Verdict(r["verdict"]), Step(r["step"]))
        for r in rows
    ]
    asn_of = {ip: asn for ip, asn, _ in ifaces}
    doc = {
        "manifest": _manifest_path(Path(args.out)).name,
        "overall": compute_metrics(inferred, labels).to_dict(),
        "per_step": {k: v.to_dict() for k, v in per_step_metrics(attributed, labels).items()},
        "baseline": compute_metrics(baseline, labels).to_dict() if baseline else None,
        "member_level": compute_metrics(rollup_members(inferred, asn_of), rollup_members(labels, asn_of)).to_dict(),
    }
    out = Path(args.out)
    _dump(out, doc)
    return inputs, [out], {}


def cmd_synth(args: argparse.Namespace) -> tuple[list[Path], list[Path], dict]:
    inputs = _require(args.config)
    cfg = load_synth_config(args.config)
    scenario = generate(cfg, args.seed)
    files = write_scenario(scenario, args.out)
    outs = sorted(p for p in files.values() if p.is_file()) + sorted(files["datasets"].glob("*.json"))
    return inputs, outs, {"seed": args.seed, **cfg.to_dict()}


def cmd_report(args: argparse.Namespace) -> tuple[list[Path], list[Path], dict]:
    inputs = _require(args.results, args.world)
    results = _load_json(Path(args.results))
    if "results" not in results:
        raise DataError(f"{args.results}: no 'results' array")
    world = load_world(args.world)
    rep = build_report(results, world)
    out_dir = Path(args.out_dir)
    geo = feasibility_geojson(results["results"], world) if args.geojson else None
    files = write_report(rep, out_dir, {"manifest": "report.manifest.json"}, geo)
    return inputs, sorted(files.values()), {}


# --- wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rpinfer", description="Infer remote peering at IXPs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--json-logs", action="store_true", help="emit diagnostics as JSON lines on stderr")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="merge raw datasets into world.json")
    s.add_argument("--in", "--inputs", dest="inputs", required=True, help="directory of dataset documents")
    s.add_argument("--out", required=True)
    s.add_argument("--report", help="ingest report path (default: ingest_report.json next to --out)")
    s.add_argument("--config")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("infer", help="run the inference pipeline")
    s.add_argument("--world", required=True)
    s.add_argument("--pings", required=True)
    s.add_argument("--traces")
    s.add_argument("--aliases")
    s.add_argument("--ixp", nargs="+", help="restrict to these IXP ids")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("validate", help="score results against labels")
    s.add_argument("--results", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("synth", help="generate a labelled synthetic scenario")
    s.add_argument("--config", help="TOML file with a [synth] table")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("report", help="per-IXP shares, step contributions, member classes")
    s.add_argument("--results", required=True)
    s.add_argument("--world", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--geojson", action="store_true", help="also write facilities and feasibility rings")
    s.set_defaults(func=cmd_report)
    return p


def _setup_logging(json_logs: bool, verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.json_logs, args.verbose)
    started = _now()
    func: Callable = args.func
    try:
        inputs, outputs, cfg = func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataError, IngestError, MeasurementError, ConfigError, SynthConfigError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    manifest = RunManifest(
        command=args.command,
        argv=argv,
        config=cfg,
        inputs=_digests(inputs),
        outputs=_digests(outputs),
        started_at=started,
        finished_at=_now(),
    )
    if args.command == "synth":
        mpath = Path(args.out) / "synth.manifest.json"
    elif args.command == "report":
        mpath = Path(args.out_dir) / "report.manifest.json"
    else:
        mpath = _manifest_path(Path(args.out))
    manifest.write(mpath)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
