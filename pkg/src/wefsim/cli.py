"""Command-line front end.

    wefsim run --config exp.ini --out runs/a [--seed N]
    wefsim inspect-partition --config exp.ini
    wefsim export-heatmaps --run runs/a --rounds 1,10,50

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config, serialize_config
from .errors import ConfigError, ParseError, PreconditionError, TrainingDivergedError
from .sim import RunResult, prepare, run_experiment

log = logging.getLogger("wefsim")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

MANIFEST = "manifest.ini"
RESULTS = "results.csv"
SUMMARY = "summary.json"
SNAPSHOT_DIR = "snapshots"
HEATMAP_DIR = "heatmaps"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for runtime failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_rows(result: RunResult) -> tuple[list[str], list[list[str]]]:
    k = result.config.num_clients
    header = ["round", "acc_clean", "acc_flagged", "acc_benign", "acc_freerider",
              "hma_benign", "hma_freerider", "xi", "detected", "exact", "free_riders_flagged",
              "flagged"] + [f"dev_{i}" for i in range(k)]
    rows = []
    for r in result.records:
        dev = r.dev if r.dev is not None else [None] * k
        rows.append([_fmt(v) for v in (r.round, r.acc_clean, r.acc_flagged, r.acc_benign,
                                       r.acc_freerider, r.hma_benign, r.hma_freerider, r.xi,
                                       r.detected, r.exact, r.free_riders_flagged)]
                    + [" ".join(str(i) for i in r.flagged) if r.flagged is not None else ""]
                    + [_fmt(v) for v in dev])
    return header, rows


def write_heatmap(counts: np.ndarray, path: Path) -> None:
    np.savetxt(path, np.asarray(counts, dtype=np.int64), fmt="%d", delimiter=",")


def write_run(result: RunResult, out: Path) -> list[str]:
    """Write results, summary, snapshots and heatmaps; return relative paths."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    header, rows = results_rows(result)
    with open(out / RESULTS, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    written.append(RESULTS)

    summary = {"hma_benign": result.hma_benign, "hma_freerider": result.hma_freerider,
               "detection_round": result.detection_round,
               "separation_round": result.separation_round, "free_riders": result.free_riders,
               "rounds": len(result.records)}
    (out / SUMMARY).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    written.append(SUMMARY)

    if result.snapshots:
        (out / SNAPSHOT_DIR).mkdir(exist_ok=True)
        (out / HEATMAP_DIR).mkdir(exist_ok=True)
    for r, stack in sorted(result.snapshots.items()):
        name = f"{SNAPSHOT_DIR}/round{r}.npy"
        np.save(out / name, stack)
        written.append(name)
        for cid, counts in enumerate(stack):
            hname = f"{HEATMAP_DIR}/wef_client{cid}_round{r}.csv"
            write_heatmap(counts, out / hname)
            written.append(hname)
    return written


def _manifest_section(cfg, outputs: list[str]) -> dict[str, str]:
    return {"artifact_version": __version__, "numpy_version": np.__version__,
            "python_version": platform.python_version(), "master_seed": str(cfg.master_seed),
            "outputs": ",".join([MANIFEST] + outputs)}


def cmd_run(config_path, out_dir, seed: int | None = None, workers: int | None = None) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, master_seed=seed)
    if workers is not None:
        cfg = replace(cfg, workers=workers)
    cfg.validate()
    out = Path(out_dir)
    result = run_experiment(cfg)
    outputs = write_run(result, out)
    (out / MANIFEST).write_text(
        serialize_config(cfg, {"manifest": _manifest_section(cfg, outputs)}), encoding="utf-8")
    print(f"wrote {len(outputs) + 1} files to {out}")
    print(f"hma_benign={result.hma_benign:.4f} hma_freerider="
          f"{_fmt(result.hma_freerider) or 'n/a'} detection_round={result.detection_round}")
    return EXIT_OK


def cmd_inspect_partition(config_path, stream=None) -> int:
    stream = stream or sys.stdout
    cfg = load_config(config_path)
    exp = prepare(cfg)
    c = exp.train.class_count
    print("client,role,samples," + ",".join(f"class{j}" for j in range(c)), file=stream)
    for cid in exp.benign_ids:
        hist = exp.client_data(cid).class_histogram()
        print(f"{cid},benign,{int(hist.sum())}," + ",".join(str(int(h)) for h in hist),
              file=stream)
    for cid in exp.free_rider_ids:
        print(f"{cid},free_rider,0," + ",".join("0" for _ in range(c)), file=stream)
    return EXIT_OK


def available_rounds(run_dir: Path) -> list[int]:
    snap = run_dir / SNAPSHOT_DIR
    if not snap.is_dir():
        return []
    return sorted(int(p.stem[len("round"):]) for p in snap.glob("round*.npy")
                  if p.stem[len("round"):].isdigit())


def cmd_export_heatmaps(run_dir, rounds: list[int], out_dir=None) -> int:
    run = Path(run_dir)
    have = available_rounds(run)
    missing = [r for r in rounds if r not in have]
    if missing:
        print(f"error: no snapshot for round(s) {','.join(map(str, missing))}; "
              f"available rounds: {','.join(map(str, have)) or 'none'}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(out_dir) if out_dir else run / HEATMAP_DIR
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for r in rounds:
        stack = np.load(run / SNAPSHOT_DIR / f"round{r}.npy")
        for cid, counts in enumerate(stack):
            write_heatmap(counts, out / f"wef_client{cid}_round{r}.csv")
            n += 1
    print(f"wrote {n} heatmaps to {out}")
    return EXIT_OK


def _rounds_arg(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wefsim", description="Federated free-rider detection simulator.")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="-v for per-round events, -vv for per-client alpha values")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, default=None, help="override master_seed")
    run.add_argument("--workers", type=int, default=None, help="override worker threads")

    insp = sub.add_parser("inspect-partition", help="print per-client data counts")
    insp.add_argument("--config", required=True)

    exp = sub.add_parser("export-heatmaps", help="write WEF count grids as CSV")
    exp.add_argument("--run", required=True)
    exp.add_argument("--rounds", required=True, type=_rounds_arg)
    exp.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.seed, args.workers)
        if args.command == "inspect-partition":
            return cmd_inspect_partition(args.config)
        return cmd_export_heatmaps(args.run, args.rounds, args.out)
    except (ConfigError, PreconditionError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        # a missing config is a usage error; anything else missing is a runtime failure
        cfg_path = getattr(args, "config", None)
        return EXIT_USAGE if cfg_path and e.filename == cfg_path else EXIT_RUNTIME
    except (TrainingDivergedError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
