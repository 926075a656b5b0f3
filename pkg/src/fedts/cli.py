"""Command line: run, grid, inspect, synth.

Run directory layout::

    report.json            metrics per round and final, transport totals
    ledger.csv             one row per payload hop
    rounds.csv             per-round, per-participant validation metrics
    timing.json            wall clock (kept out of report.json so reports replay bit-exact)
    resolved-config.json   every default materialised; replays the run
    class-map.json         original fault id -> model label
    scaler.json            training mean / std
    stationary-plan.json   per-column detrend / season plan
    partition-plan.json    (class, run) pairs per participant and split
    models/                final float32 payload per node plus manifest.json

Exit codes: 0 success, 1 validation, 2 runtime, 3 integrity.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import GRID_CELLS, PIPELINES, ExperimentConfig
from .data import synthesize, write_csv
from .errors import ConfigError, FedTSError, ParseError
from .federation import ExperimentReport, run_experiment
from .ledger import TransportLedger
from .model import manifest, serialize

log = logging.getLogger("fedts")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_INTEGRITY = 0, 1, 2, 3

REQUIRED_FILES = (
    "report.json", "ledger.csv", "rounds.csv", "resolved-config.json", "class-map.json",
    "scaler.json", "stationary-plan.json",
)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def rounds_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([
        "round", "participant", "val_loss", "train_loss", "macro_precision", "macro_recall",
        "macro_f1", "weighted_f1", "accuracy", "cumulative_bytes_transmitted",
    ])
    for entry in report["rounds"]:
        for pid, m in entry["participants"].items():
            w.writerow([
                entry["round"], pid, repr(m["loss"]), repr(m["train_loss"]) if "train_loss" in m else "",
                repr(m["macro"]["precision"]), repr(m["macro"]["recall"]), repr(m["macro"]["f1"]),
                repr(m["weighted"]["f1"]), repr(m["accuracy"]),
                entry["cumulative_bytes"].get(pid, 0),
            ])
    return buf.getvalue()


def write_run_dir(result: ExperimentReport, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report = result.data
    (out / "report.json").write_text(_dump(report))
    (out / "ledger.csv").write_text(result.ledger.to_csv())
    (out / "rounds.csv").write_text(rounds_csv(report))
    (out / "timing.json").write_text(_dump({"wall_clock_seconds": result.wall_clock_seconds}))
    cfg.save(out / "resolved-config.json")
    (out / "class-map.json").write_text(_dump({str(k): v for k, v in result.prepared.class_map.items()}))
    (out / "scaler.json").write_text(result.prepared.scaler.to_json() + "\n")
    result.prepared.plan.save(out / "stationary-plan.json")
    (out / "partition-plan.json").write_text(result.prepared.partition_plan.to_json() + "\n")
    models = out / "models"
    models.mkdir(exist_ok=True)
    entries = {}
    for pid, params in result.final_params.items():
        payload = serialize(params)
        name = f"node-{pid}.bin"
        (models / name).write_bytes(payload)
        entries[name] = {"sha256": hashlib.sha256(payload).hexdigest(), "tensors": manifest(params)}
    (models / "manifest.json").write_text(_dump(entries))


def execute(cfg: ExperimentConfig, out: Path) -> dict:
    """Run one experiment into ``out``; nothing is left behind on failure."""
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        raise ConfigError("output_dir", f"{out} already exists and is not empty")
    cfg = replace(cfg.resolved(), output_dir=str(out))
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        result = run_experiment(cfg)
        write_run_dir(result, cfg, tmp)
        if out.exists():
            out.rmdir()
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return result.data


def _load_config(path, seed, out) -> ExperimentConfig:
    cfg = ExperimentConfig.load(path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out is not None:
        cfg = replace(cfg, output_dir=str(out))
    if cfg.output_dir is None:
        raise ConfigError("output_dir", "set it in the config or pass --out")
    return cfg.validate()


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed, args.out)
    report = execute(cfg, Path(cfg.output_dir))
    m = report["final"]["mean"]["macro"]
    print(f"{cfg.output_dir}: macro P={m['precision']:.4f} R={m['recall']:.4f} F1={m['f1']:.4f}")
    return EXIT_OK


# ----------------------------------------------------------------------- grid


def grid_cells(spec: dict | None) -> list[tuple[str, str, str]]:
    spec = spec or {}
    pipelines = spec.get("pipelines", list(PIPELINES))
    cells = [tuple(c) for c in spec.get("cells", GRID_CELLS)]
    return [(p, par, top) for p in pipelines for par, top in cells]


def cell_name(pipeline, paradigm, topology) -> str:
    return f"{pipeline}-{paradigm}-{topology}"


def _run_cell(args):
    cfg_dict, out = args
    try:
        report = execute(ExperimentConfig.from_dict(cfg_dict), Path(out))
        return {"status": "ok", **report["final"]["mean"]["macro"],
                "total_bytes_transmitted": report["transport"]["total_bytes_transmitted"]}
    except Exception as exc:  # isolate per-cell failures
        return {"status": f"failed: {type(exc).__name__}: {exc}"}


def summary_tables(rows: list[dict]) -> tuple[str, str]:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["pipeline", "paradigm", "topology", "status", "precision", "recall", "f1", "total_bytes_transmitted"]
    w.writerow(cols)
    for r in rows:
        w.writerow([r.get(c, "") for c in cols])

    pipelines = list(dict.fromkeys(r["pipeline"] for r in rows))
    cells = list(dict.fromkeys((r["paradigm"], r["topology"]) for r in rows))
    index = {(r["pipeline"], r["paradigm"], r["topology"]): r for r in rows}
    lines = [
        "| Paradigm | Topology | Metric | " + " | ".join(pipelines) + " |",
        "|---|---|---|" + "---|" * len(pipelines),
    ]
    for par, top in cells:
        for metric in ("precision", "recall", "f1"):
            vals = []
            for p in pipelines:
                r = index.get((p, par, top))
                if r is None:
                    vals.append("")
                elif r["status"] != "ok":
                    vals.append("FAILED")
                else:
                    vals.append(f"{r[metric]:.4f}")
            label = {"precision": "Precision", "recall": "Recall", "f1": "F1-score"}[metric]
            lines.append(f"| {par} | {top} | {label} | " + " | ".join(vals) + " |")
    return buf.getvalue(), "\n".join(lines) + "\n"


def cmd_grid(args) -> int:
    base = _load_config(args.config, args.seed, args.out)
    spec = None
    if args.grid:
        try:
            spec = json.loads(Path(args.grid).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("grid", f"cannot read grid spec: {exc}") from None
    root = Path(base.output_dir)
    if root.exists() and any(root.iterdir()):
        raise ConfigError("output_dir", f"{root} already exists and is not empty")
    jobs, keys = [], []
    for pipeline, paradigm, topology in grid_cells(spec):
        cell = replace(base, pipeline=pipeline, paradigm=paradigm, topology=topology)
        out = root / cell_name(pipeline, paradigm, topology)
        try:
            cell.validate()
        except ConfigError:
            continue  # pairing filter
        jobs.append((replace(cell, output_dir=str(out)).to_dict(), str(out)))
        keys.append((pipeline, paradigm, topology))
    root.mkdir(parents=True, exist_ok=True)
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = [
        {"pipeline": p, "paradigm": par, "topology": top, **res}
        for (p, par, top), res in zip(keys, results)
    ]
    csv_text, md = summary_tables(rows)
    (root / "summary.csv").write_text(csv_text)
    (root / "summary.md").write_text(md)
    print(md, end="")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_RUNTIME


# -------------------------------------------------------------------- inspect


def inspect_run(run_dir) -> tuple[dict, list[str]]:
    """Load a run directory and cross-check it; returns (summary, integrity warnings)."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ParseError("run directory not found", run_dir)
    for name in REQUIRED_FILES:
        if not (run_dir / name).exists():
            raise ParseError("missing file", run_dir / name)
    try:
        report = json.loads((run_dir / "report.json").read_text())
        cfg = ExperimentConfig.from_dict(json.loads((run_dir / "resolved-config.json").read_text()))
    except (json.JSONDecodeError, ConfigError) as exc:
        raise ParseError(f"corrupt file ({exc})", run_dir) from None
    ledger_text = (run_dir / "ledger.csv").read_text()
    ledger = TransportLedger.load(run_dir / "ledger.csv")

    warnings = []
    transport = report["transport"]
    if hashlib.sha256(ledger_text.encode()).hexdigest() != transport.get("ledger_sha256"):
        warnings.append("ledger.csv checksum does not match report.json")
    if ledger.total_bytes() != transport["total_bytes_sent"] or len(ledger) != transport["payloads"]:
        warnings.append("ledger totals disagree with report.json")
    if cfg.digest() != report["config_digest"]:
        warnings.append("resolved-config.json digest does not match report.json")
    manifest_path = run_dir / "models" / "manifest.json"
    if manifest_path.exists():
        for name, entry in json.loads(manifest_path.read_text()).items():
            path = run_dir / "models" / name
            if not path.exists():
                warnings.append(f"model payload {path} missing")
            elif hashlib.sha256(path.read_bytes()).hexdigest() != entry["sha256"]:
                warnings.append(f"model payload {path} checksum mismatch")

    final = report["final"]["mean"]
    summary = {
        "run": str(run_dir),
        "pipeline": report["pipeline"],
        "paradigm": report["paradigm"],
        "topology": report["topology"],
        "rounds": report["rounds_run"],
        "macro": final["macro"],
        "weighted": final["weighted"],
        "payloads": transport["payloads"],
        "total_bytes_transmitted": transport["total_bytes_transmitted"],
        "mean_bytes_transmitted": transport["mean_bytes_transmitted"],
        "config_digest": report["config_digest"],
    }
    return summary, warnings


def cmd_inspect(args) -> int:
    summary, warnings = inspect_run(args.run_dir)
    m, wtd = summary["macro"], summary["weighted"]
    print(f"run            {summary['run']}")
    print(f"setup          {summary['pipeline']} / {summary['paradigm']} / {summary['topology']}, "
          f"{summary['rounds']} rounds")
    print(f"macro          P={m['precision']:.4f} R={m['recall']:.4f} F1={m['f1']:.4f}")
    print(f"weighted       P={wtd['precision']:.4f} R={wtd['recall']:.4f} F1={wtd['f1']:.4f}")
    print(f"payloads       {summary['payloads']}")
    print(f"bytes total    {summary['total_bytes_transmitted']}")
    print(f"bytes / node   {summary['mean_bytes_transmitted']:.1f}")
    print(f"config digest  {summary['config_digest']}")
    for w in warnings:
        print(f"integrity warning: {w}", file=sys.stderr)
    return EXIT_INTEGRITY if warnings else EXIT_OK


# ---------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig()
    spec = cfg.data.synthetic
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.out is None:
        raise ConfigError("out", "an output CSV path is required")
    write_csv(synthesize(spec), args.out, cfg.data.csv_format)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedts", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="run a grid of experiments (4 pipelines x 5 cells by default)")
    p.add_argument("--config", required=True, help="base experiment config")
    p.add_argument("--grid", help="grid spec JSON with 'pipelines' and 'cells'")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("inspect", help="summarise and verify a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth", help="write the synthetic dataset as CSV")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY if args.command == "inspect" else EXIT_VALIDATION
    except FedTSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
