"""Command-line entry point: ``kvsched {gen-workload,simulate,compare,analyze-trace}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .engine import CostModel, SimConfig, SimResult, run
from .errors import ConfigError, IntegrityError
from .metrics import build_report
from .predictor import DEFAULT_REPETITION_BUDGET, DEFAULT_WINDOW, RepetitionPolicy
from .schedulers import SCHEDULER_NAMES, make_policy
from .workload import (
    DEFAULT_MAX_NEW_TOKENS,
    PRESETS,
    ClosedLoop,
    OpenLoop,
    RequestSpec,
    WorkloadConfig,
    concat_workloads,
    dump_workload,
    gen_uniform_workload,
    load_trace,
    preset_config,
    read_workload,
    with_poisson_arrivals,
)

SUMMARY_COLUMNS = [
    "scheduler", "params", "dataset", "clients", "seed", "decoding_steps", "avg_consumed_pct",
    "avg_future_required_pct", "evicted_reqs_pct", "goodput", "throughput", "sla_met_fraction", "error",
]


def _range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN:MAX, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _preset_list(text: str) -> list[str]:
    names = [x for x in text.split(",") if x]
    bad = [n for n in names if n not in PRESETS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown preset(s) {bad}; choose from {', '.join(PRESETS)}")
    return names


def _sched_list(text: str) -> list[tuple[str, float | None]]:
    out = []
    for item in (x for x in text.split(",") if x):
        name, _, value = item.partition(":")
        if name not in SCHEDULER_NAMES:
            raise argparse.ArgumentTypeError(f"unknown scheduler {name!r}; choose from {', '.join(SCHEDULER_NAMES)}")
        try:
            out.append((name, float(value) if value else None))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad scheduler parameter in {item!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("need at least one scheduler")
    return out


# -- shared flag groups -------------------------------------------------------

def _add_workload_source(p: argparse.ArgumentParser, count_required: bool = False) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--workload", type=Path, help="workload JSON file")
    g.add_argument("--preset", type=_preset_list, help="preset name, or comma list to concatenate")
    g.add_argument("--trace", type=Path, help="CSV trace with a header row")
    g.add_argument("--count", type=int, required=count_required, help="requests per generated part")
    g.add_argument("--input", type=_range, help="input length range MIN:MAX")
    g.add_argument("--output", type=_range, help="output length range MIN:MAX")
    g.add_argument("--max-new-tokens", type=int, help=f"max_new_tokens cap (traces default {DEFAULT_MAX_NEW_TOKENS})")
    g.add_argument("--scale", type=int, default=1, help="divide preset lengths by this factor")
    g.add_argument("--workload-seed", type=int, help="seed for generation (defaults to --seed)")
    g.add_argument("--rate", type=float, help="open-loop Poisson arrival rate (requests/s)")
    g.add_argument("--input-col", default="input_tokens")
    g.add_argument("--output-col", default="output_tokens")
    g.add_argument("--timestamp-col")


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("simulation")
    g.add_argument("--capacity", type=int, default=16384, help="KV capacity in tokens")
    g.add_argument("--ttft-limit", type=float, default=10.0)
    g.add_argument("--mtpot-limit", type=float, default=1.5)
    g.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="history window size")
    g.add_argument("--repetition-budget", type=int, default=DEFAULT_REPETITION_BUDGET)
    g.add_argument("--aggregate", choices=("max", "median", "first"), default="max")
    g.add_argument("--victim-policy", choices=("lifo", "longest-remaining"), default="lifo")
    g.add_argument("--prefill-per-token", type=float, default=CostModel.prefill_per_token)
    g.add_argument("--decode-base", type=float, default=CostModel.decode_base)
    g.add_argument("--decode-per-request", type=float, default=CostModel.decode_per_request)
    g.add_argument("--decode-per-resident-token", type=float, default=CostModel.decode_per_resident_token)
    g.add_argument("--check-invariants", action="store_true", help="verify pool accounting every iteration")


def _build_workload(args: argparse.Namespace, seed: int) -> tuple[list[RequestSpec], str]:
    """Workload and a dataset label from the source flags."""
    sources = [x for x in (args.workload, args.preset, args.trace) if x]
    if args.input or args.output:
        sources.append("ranges")
    if len(sources) != 1:
        raise ConfigError("give exactly one workload source: --workload, --preset, --trace or --input/--output")
    wseed = seed if args.workload_seed is None else args.workload_seed
    arrival = OpenLoop(args.rate) if args.rate else ClosedLoop(1)
    if args.workload:
        wl, label = read_workload(args.workload), args.workload.stem
    elif args.trace:
        wl, summary = load_trace(
            args.trace, args.input_col, args.output_col, args.timestamp_col,
            args.max_new_tokens or DEFAULT_MAX_NEW_TOKENS,
        )
        print(
            f"trace: loaded={summary.loaded} skipped_zero={summary.skipped_zero}"
            f" skipped_unparsable={summary.skipped_unparsable} truncated={summary.truncated}",
            file=sys.stderr,
        )
        label = args.trace.stem
    elif args.preset:
        if args.count is None:
            raise ConfigError("--count is required with --preset")
        parts = [
            gen_uniform_workload(preset_config(name, args.count, wseed + k, args.scale, arrival))
            for k, name in enumerate(args.preset)
        ]
        wl, label = concat_workloads(parts), "+".join(args.preset)
    else:
        if args.count is None or not (args.input and args.output):
            raise ConfigError("--count, --input and --output are required for a custom workload")
        cfg = WorkloadConfig(
            count=args.count, input_range=args.input, output_range=args.output,
            max_new_tokens=args.max_new_tokens or args.output[1], seed=wseed, arrival=arrival,
        )
        wl, label = gen_uniform_workload(cfg), "custom"
    if args.rate and (args.workload or args.trace) and not getattr(args, "timestamp_col", None):
        wl = with_poisson_arrivals(wl, args.rate, wseed)
    return wl, label


def _sim_config(args: argparse.Namespace, seed: int, clients: int | None) -> SimConfig:
    arrival = OpenLoop(args.rate) if args.rate else ClosedLoop(clients or 64)
    return SimConfig(
        capacity=args.capacity,
        cost=CostModel(args.prefill_per_token, args.decode_base, args.decode_per_request, args.decode_per_resident_token),
        ttft_limit=args.ttft_limit,
        mtpot_limit=args.mtpot_limit,
        arrival=arrival,
        seed=seed,
        window_size=args.window,
        repetition=RepetitionPolicy(args.repetition_budget, args.aggregate),
        victim_policy=args.victim_policy,
        check_invariants=args.check_invariants,
    )


def write_samples(result: SimResult, path: Path) -> None:
    s = result.samples
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "consumed_pct", "future_required_pct", "at_admission"])
        for i, row in enumerate(zip(s.consumed, s.future_required, s.at_admission)):
            w.writerow([i, repr(row[0]), repr(row[1]), int(row[2])])


# -- commands -----------------------------------------------------------------

def cmd_gen_workload(args: argparse.Namespace) -> int:
    wl, label = _build_workload(args, args.seed)
    dump_workload(wl, args.out)
    n = len(wl)
    mean_in = float(np.mean([r.input_len for r in wl])) if n else 0.0
    mean_out = float(np.mean([r.true_output_len for r in wl])) if n else 0.0
    print(f"{label}: wrote {n} requests to {args.out} (mean input {mean_in:.1f}, mean output {mean_out:.1f})")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    wl, label = _build_workload(args, args.seed)
    value = {"past-future": args.reserved, "aggressive": args.watermark, "conservative": args.overcommit}.get(args.scheduler)
    policy = make_policy(args.scheduler, value, RepetitionPolicy(args.repetition_budget, args.aggregate))
    cfg = _sim_config(args, args.seed, args.clients)
    result = run(wl, policy, cfg)
    report = build_report(result, cfg.ttft_limit, cfg.mtpot_limit)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    result.log.write_jsonl(out / "events.jsonl")
    write_samples(result, out / "memory_samples.csv")
    print(
        f"{label} {policy.name} {policy.params}: goodput={report.goodput:.2f} tok/s"
        f" evictions={report.total_evictions} ({report.evicted_reqs_pct:.2%})"
        f" decoding_steps={report.decoding_steps} sla_met={report.sla_met_fraction:.2%}"
    )
    return 0


@dataclass(frozen=True)
class Cell:
    scheduler: str
    value: float | None
    dataset: str
    clients: int
    seed: int


def _run_cell(args: argparse.Namespace, cell: Cell) -> dict:
    row = {"scheduler": cell.scheduler, "dataset": cell.dataset, "clients": cell.clients, "seed": cell.seed}
    try:
        a = argparse.Namespace(**vars(args))
        a.workload, a.preset, a.trace, a.input, a.output = None, None, None, None, None
        if cell.dataset in PRESETS or "+" in cell.dataset:
            a.preset = cell.dataset.split("+")
        elif args.workload_files:
            a.workload = {p.stem: p for p in args.workload_files}[cell.dataset]
        else:
            a.trace = args.trace
        wl, _ = _build_workload(a, cell.seed)
        policy = make_policy(cell.scheduler, cell.value, RepetitionPolicy(args.repetition_budget, args.aggregate))
        cfg = _sim_config(args, cell.seed, cell.clients)
        result = run(wl, policy, cfg)
        report = build_report(result, cfg.ttft_limit, cfg.mtpot_limit)
        if args.save_logs:
            stem = f"{cell.dataset}_{policy.name}_{policy.params or 'none'}_c{cell.clients}_s{cell.seed}"
            result.log.write_jsonl(args.out / "logs" / f"{stem}.events.jsonl")
            write_samples(result, args.out / "logs" / f"{stem}.samples.csv")
        row.update(
            params=policy.params,
            decoding_steps=report.decoding_steps,
            avg_consumed_pct=report.avg_consumed_pct,
            avg_future_required_pct=report.avg_future_required_pct,
            evicted_reqs_pct=report.evicted_reqs_pct,
            goodput=report.goodput,
            throughput=report.throughput,
            sla_met_fraction=report.sla_met_fraction,
            error="",
        )
    except (ConfigError, IntegrityError, ValueError) as exc:
        row.update(params="" if cell.value is None else f"{cell.value:g}", error=f"{type(exc).__name__}: {exc}")
    return row


def cmd_compare(args: argparse.Namespace) -> int:
    if args.workload_files:
        datasets = [p.stem for p in args.workload_files]
    elif args.trace:
        datasets = [args.trace.stem]
    else:
        datasets = args.preset or ["distribution-1"]
        if args.concat:
            datasets = ["+".join(datasets)]
        if args.count is None:
            raise ConfigError("--count is required with presets")
    cells = [
        Cell(name, value, ds, c, s)
        for ds in datasets
        for name, value in args.schedulers
        for c in (args.clients or [64])
        for s in args.seeds
    ]
    args.out.mkdir(parents=True, exist_ok=True)
    if args.save_logs:
        (args.out / "logs").mkdir(exist_ok=True)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_run_cell, [args] * len(cells), cells))
    else:
        rows = [_run_cell(args, c) for c in cells]

    def fmt(v):
        return repr(v) if isinstance(v, float) else v

    with open(args.out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: fmt(row.get(k, "")) for k in SUMMARY_COLUMNS})
    by_sched: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        by_sched.setdefault((row["scheduler"], row["params"]), []).append(row)
    for (name, params), group in by_sched.items():
        fname = f"goodput_{name}_{params or 'default'}.csv".replace("=", "-")
        with open(args.out / fname, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "clients", "seed", "goodput", "throughput"])
            for row in group:
                w.writerow([row["dataset"], row["clients"], row["seed"], fmt(row.get("goodput", "")), fmt(row.get("throughput", ""))])
    failed = [r for r in rows if r["error"]]
    print(f"compare: {len(rows)} cells, {len(failed)} failed; wrote {args.out / 'summary.csv'}")
    for r in failed:
        print(f"  failed {r['scheduler']} {r['dataset']} c={r['clients']} s={r['seed']}: {r['error']}", file=sys.stderr)
    return 1 if failed else 0


def lengths_from_events(path: Path) -> list[int]:
    """Output lengths of finished requests, in finish order, from an event log export."""
    from .events import FINISH, TOKEN, EventLog

    _, kind, rid, _ = EventLog.read_jsonl(path).arrays()
    tokens = np.bincount(rid[kind == TOKEN], minlength=int(rid.max()) + 1 if rid.size else 0)
    return [int(tokens[i]) for i in rid[kind == FINISH]]


def cmd_analyze_trace(args: argparse.Namespace) -> int:
    if args.events:
        lengths, label = lengths_from_events(args.events), args.events.stem
    else:
        wl, label = _build_workload(args, args.seed)
        lengths = [r.true_output_len for r in wl]
    matrix = analysis.window_similarity_matrix(lengths, args.window, args.bin_width)
    summary = analysis.write_analysis(matrix, args.window, args.out)
    if args.history_window:
        adj, glob = analysis.history_running_similarity(
            lengths, args.history_window, args.running_window or args.window, args.bin_width
        )
        summary.update(history_window=args.history_window, running_window=args.running_window or args.window,
                       history_adjacent=adj, history_global=glob)
        (args.out / "similarity_summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    print(
        f"{label}: {summary['num_windows']} windows of {args.window};"
        f" mean_adjacent={summary['mean_adjacent']:.4f} mean_global={summary['mean_global']:.4f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvsched", description="Continuous-batching admission scheduler simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-workload", help="generate a workload JSON file")
    _add_workload_source(p, count_required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("workload.json"))
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("simulate", help="run one simulation")
    _add_workload_source(p)
    _add_sim_flags(p)
    p.add_argument("--scheduler", choices=SCHEDULER_NAMES, required=True)
    p.add_argument("--reserved", type=float, help="past-future reserved ratio (default 0.05)")
    p.add_argument("--watermark", type=float, help="aggressive watermark (default 0.99)")
    p.add_argument("--overcommit", type=float, help="conservative overcommit ratio (default 1.0)")
    p.add_argument("--clients", type=int, help="closed-loop client count (default 64)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("sim-out"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="sweep schedulers x clients x seeds")
    _add_workload_source(p)
    _add_sim_flags(p)
    p.add_argument("--workload-files", type=Path, nargs="+", help="compare over these workload files")
    p.add_argument("--concat", action="store_true", help="concatenate the presets into one dataset")
    p.add_argument(
        "--schedulers", type=_sched_list,
        default=_sched_list("oracle,past-future:0.03,past-future:0.05,past-future:0.1,aggressive:0.99,"
                            "aggressive:0.95,aggressive:0.9,conservative:1.0,conservative:1.5"),
        help="comma list of NAME[:PARAM]",
    )
    p.add_argument("--clients", type=_int_list, help="closed-loop client counts")
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--save-logs", action="store_true", help="also write each cell's event log")
    p.add_argument("--out", type=Path, default=Path("compare-out"))
    p.set_defaults(func=cmd_compare, seed=0)

    p = sub.add_parser("analyze-trace", help="window similarity of output-length distributions")
    _add_workload_source(p)
    p.add_argument("--events", type=Path, help="engine event log (JSONL) instead of a workload")
    p.add_argument("--window", type=int, default=1000)
    p.add_argument("--bin-width", type=int, default=1)
    p.add_argument("--history-window", type=int, help="also compare history windows against running windows")
    p.add_argument("--running-window", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("analysis-out"))
    p.set_defaults(func=cmd_analyze_trace)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"kvsched {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (IntegrityError, OSError) as exc:
        print(f"kvsched {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
