"""Command-line front end.

    jointloc survey   --config cfg.json --out runs/db
    jointloc train    --config cfg.json --db runs/db --out runs/models
    jointloc queries  --config cfg.json --out runs/queries.jsonl --n 20
    jointloc localize --models runs/models --queries runs/queries.jsonl
    jointloc evaluate --config cfg.json --out runs/eval --plot
    jointloc bench    --config cfg.json --out runs/bench

Exit codes: 0 ok, 2 config error, 3 I/O or hash mismatch, 4 training divergence.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config, save_config
from .core import ConfigError, DivergenceError
from .db import DbError, load_db, save_db
from .pipeline import check_hash, load_system, save_system, train_system

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

log = logging.getLogger("jointloc")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_manifest(out: Path, args, cfg: ExperimentConfig | None, started: str, files) -> None:
    manifest = {
        "subcommand": args.command,
        "config_path": getattr(args, "config", None),
        "out_dir": str(out),
        "seed": None if cfg is None else cfg.seed,
        "started": started,
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
        "artifacts": {str(Path(f).relative_to(out)): _sha256(Path(f)) for f in sorted(map(str, files))},
    }
    _write_json(out / "manifest.json", manifest)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "drop_missed_areas", False):
        cfg = cfg.replace(fine=dataclasses.replace(cfg.fine, drop_missed_areas=True))
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- subcommands

def cmd_config(args) -> list[Path]:
    cfg = _config(args)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_config(cfg, path)
    return []


def cmd_survey(args) -> list[Path]:
    from .sim import run_survey

    cfg, out = _config(args), _out_dir(args)
    wifi, images = run_survey(cfg)
    files = [out / "wifi_db.jsonl", out / "image_db.jsonl", out / "config.json"]
    save_db(wifi, files[0])
    save_db(images, files[1])
    save_config(cfg, files[2])
    log.info("surveyed %d RPs and %d image locations", len(wifi), len(images))
    return files


def cmd_train(args) -> list[Path]:
    cfg, out = _config(args), _out_dir(args)
    db_dir = Path(args.db)
    wifi = load_db(db_dir / "wifi_db.jsonl")
    images = load_db(db_dir / "image_db.jsonl")
    system = train_system(cfg, wifi, images)
    log.info("coarse: %d iterations, loss %.4f; fine: %d epochs, final loss %.5f",
             system.coarse.iterations, system.coarse.final_loss, system.fine.epochs,
             system.fine.loss_curve[-1] if system.fine.loss_curve else float("nan"))
    return save_system(system, out)


def cmd_queries(args) -> list[Path]:
    from .evaluation import make_queries, save_queries
    from .sim import Environment

    cfg = _config(args)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    # offset keeps these disjoint from the evaluation queries drawn with cfg.seed
    queries = make_queries(Environment.from_config(cfg), args.n, seed=cfg.seed + 10_000)
    save_queries(queries, path, cfg.config_hash(), cfg.seed, with_truth=not args.no_truth)
    return []


def cmd_localize(args) -> list[Path]:
    from .evaluation import load_queries

    system = load_system(args.models)
    header, queries = load_queries(args.queries)
    check_hash(system.cfg.config_hash(), header["config_hash"], "query file")
    for m, q in enumerate(queries):
        sel, est = system.localize(q.rssi, q.features)
        rec = {
            "query": m,
            "candidates": [{"area": j, "prob": float(p)} for j, p in zip(sel.area_indices, sel.probs)],
            "location": est.to_dict(),
        }
        if q.location is not None:
            rec["error_m"] = est.distance(q.location)
        print(json.dumps(rec), flush=True)
    return []


def _report_files(report, out: Path, stem: str) -> list[Path]:
    files = [_write_json(out / f"{stem}.json", report.to_dict())]
    for method, pts in report.cdf.items():
        files.append(_write_csv(out / f"{stem}_cdf_{method}.csv", ["threshold_m", "fraction"], pts))
    return files


def cmd_evaluate(args) -> list[Path]:
    from .evaluation import run_experiment, run_grid_sweep

    cfg, out = _config(args), _out_dir(args)
    main = run_experiment(cfg).report
    files = _report_files(main, out, "report")
    latency = {"accuracy": main.latency_dict(), "sweep": []}

    sweep_dir = out / "sweep"
    sweep_dir.mkdir(exist_ok=True)
    reports = []
    for s in cfg.sweep_spacings:
        r = main if s == cfg.grid_spacing else run_grid_sweep(cfg, [s])[0]
        reports.append(r)
        files += _report_files(r, sweep_dir, f"report_spacing_{s:g}m")
        latency["sweep"].append(r.latency_dict())
    files.append(_write_csv(
        out / "sweep_summary.csv",
        ["grid_spacing_m", "n_rp", "median_jvwl_m", "mean_jvwl_m", "median_baseline_m",
         "mean_baseline_m", "containment_rate"],
        [[r.grid_spacing, r.n_rp, r.median["jvwl"], r.mean["jvwl"], r.median["baseline_wifi"],
          r.mean["baseline_wifi"], r.containment_rate] for r in reports]))
    files.append(_write_json(out / "latency_per_query.json", latency))

    if args.plot:
        from .plotting import plot_cdf, plot_sweep

        figs = out / "figures"
        figs.mkdir(exist_ok=True)
        plot_cdf(main, figs / "cdf.svg")
        plot_sweep(reports, figs / "grid_sweep.svg")
        files += [figs / "cdf.svg", figs / "grid_sweep.svg"]
    log.info("median error: jvwl %.3f m, baseline %.3f m, containment %.3f",
             main.median["jvwl"], main.median["baseline_wifi"], main.containment_rate)
    return files


def cmd_bench(args) -> list[Path]:
    from .evaluation import make_queries, run_latency_bench
    from .sim import Environment, run_survey

    cfg, out = _config(args), _out_dir(args)
    env = Environment.from_config(cfg)
    wifi, images = run_survey(cfg, env)
    system = train_system(cfg, wifi, images)
    queries = make_queries(env, max(cfg.latency_query_counts))
    table = run_latency_bench(system, queries, cfg.latency_query_counts, cfg.latency_reps)
    files = [
        _write_json(out / "latency.json", table.to_dict()),
        _write_csv(out / "latency.csv", ["queries", "baseline_wifi_s", "jvwl_s"],
                   [[q, row["baseline_wifi"], row["jvwl"]] for q, row in table.rows()]),
    ]
    if args.plot:
        from .plotting import plot_latency

        figs = out / "figures"
        figs.mkdir(exist_ok=True)
        plot_latency(table, figs / "latency.svg")
        files.append(figs / "latency.svg")
    return files


COMMANDS = {
    "config": cmd_config,
    "survey": cmd_survey,
    "train": cmd_train,
    "queries": cmd_queries,
    "localize": cmd_localize,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_CONFIG, "usage", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jointloc", description="Joint WiFi/visual coarse-to-fine indoor localization")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help="output directory"):
        sp.add_argument("--config", help="experiment config JSON (defaults if omitted)")
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("config", help="write the (default or given) config as JSON")
    common(sp, "output file")
    sp.add_argument("--drop-missed-areas", action="store_true")

    sp = sub.add_parser("survey", help="generate and persist the WiFi and image databases")
    common(sp)

    sp = sub.add_parser("train", help="train coarse classifier and fine regressor")
    common(sp)
    sp.add_argument("--db", required=True, help="directory written by `survey`")
    sp.add_argument("--drop-missed-areas", action="store_true",
                    help="drop training samples whose true area was not selected")

    sp = sub.add_parser("queries", help="synthesize a query file")
    common(sp, "output file")
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--no-truth", action="store_true", help="omit ground-truth locations")

    sp = sub.add_parser("localize", help="localize queries with trained models")
    sp.add_argument("--models", required=True, help="directory written by `train`")
    sp.add_argument("--queries", required=True, help="query file (JSON Lines envelope)")

    sp = sub.add_parser("evaluate", help="accuracy experiment and grid sweep")
    common(sp)
    sp.add_argument("--plot", action="store_true", help="also write SVG figures")
    sp.add_argument("--drop-missed-areas", action="store_true")

    sp = sub.add_parser("bench", help="latency table")
    common(sp)
    sp.add_argument("--plot", action="store_true")
    sp.add_argument("--drop-missed-areas", action="store_true")
    return p


def _fail(err: CliError) -> int:
    sys.stderr.write(json.dumps({"error": err.kind, "message": str(err), "exit_code": err.code}) + "\n")
    return err.code


def main(argv=None) -> int:
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        try:
            files = COMMANDS[args.command](args)
        except ConfigError as e:
            raise CliError(EXIT_CONFIG, "config", str(e)) from e
        except DivergenceError as e:
            raise CliError(EXIT_DIVERGENCE, "divergence", str(e)) from e
        except DbError as e:
            raise CliError(EXIT_IO, type(e).__name__, str(e)) from e
        except OSError as e:
            raise CliError(EXIT_IO, "io", str(e)) from e
        if files:
            cfg = _config(args) if hasattr(args, "config") else None
            _write_manifest(Path(args.out), args, cfg, started, files)
    except CliError as e:
        return _fail(e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
