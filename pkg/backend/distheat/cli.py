#!/usr/bin/env python3
"""
distheat CLI - distributed heterogeneous precision-matrix estimation

Subcommands: synth, run, eval, bench, rounds.
Exit codes: 0 success, 2 invalid input, 1 runtime failure.
"""

import argparse
import json
import shutil
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from distheat import __version__
from distheat.core.config import settings
from distheat.core.errors import (
    EXIT_OK,
    EXIT_VALIDATION,
    DataFormatError,
    ValidationError,
    handle_exception,
)
from distheat.core.logging import configure_logging
from distheat.models.ensemble import PrecisionEnsemble
from distheat.models.site import SiteDataset, site_sort_key
from distheat.schemas.config import RunConfig
from distheat.schemas.datagen import GraphKind, GraphSpec, SampleSpec
from distheat.schemas.report import ExperimentGrid, LossKind
from distheat.services import datagen, evalbench, protocol
from distheat.utils.charts import plot_loss_series
from distheat.utils.manifest import read_manifest, write_manifest
from distheat.utils.matrix_io import data_header, read_matrix, write_matrix

console = Console()

GRAPH_CHOICES = {"er": GraphKind.erdos_renyi, "banded": GraphKind.banded}
RULE_CHOICES = ["soft", "hard", "scad", "mcp"]
SYNTH_MANIFEST = "meta.json"


# ---------------------------------------------------------------- synth


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    graph = GraphSpec(
        kind=GRAPH_CHOICES[args.graph],
        p=args.p,
        M=args.M,
        target_degree=args.degree,
        hete_ratio=args.hete_ratio,
        seed=args.seed,
    )
    samples = SampleSpec(n0=args.n0, M=args.M, seed=args.seed)

    ensemble, profile = datagen.generate_ensemble(graph)
    sizes = datagen.sample_sizes(samples)
    datasets = datagen.sample_sites(ensemble, sizes, seed=args.seed, n_jobs=args.threads)

    header = data_header(graph.p)
    for m, dataset in enumerate(datasets):
        write_matrix(out / f"site_{m}.csv", dataset.raw, header=header)
        write_matrix(out / f"omega_{m}.csv", ensemble[m])

    write_manifest(
        out,
        "synth",
        {
            "graph": graph.model_dump(mode="json"),
            "samples": samples.model_dump(mode="json"),
            "sample_sizes": sizes,
            "sites": [d.site_id for d in datasets],
            "s1": profile.s1,
            "s2": profile.s2,
            "s0": profile.s0,
        },
        name=SYNTH_MANIFEST,
    )
    console.print(
        f"[bold]synth[/bold] wrote {graph.M} sites (p={graph.p}, n={sizes}) "
        f"s1={profile.s1} s2={profile.s2} -> {out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- run


def _load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    file = Path(path)
    if not file.is_file():
        raise DataFormatError(str(file), None, "config file not found")
    try:
        document = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(str(file), exc.lineno, exc.msg) from exc
    if not isinstance(document, dict):
        raise DataFormatError(str(file), None, "config must be a JSON object")
    return document


def _set(target: Dict[str, Any], dotted: str, value: Any) -> None:
    node = target
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then explicit flags on top"""
    merged = _load_config_file(args.config)
    overrides = {
        "kappa": args.kappa,
        "seed": args.seed,
        "threads": args.threads,
        "lambda_rule.c_lambda": args.c_lambda,
        "lambda_rule.mode": args.lambda_mode,
        "shrinkage.delta": args.delta,
        "shrinkage.s0_hint": args.s0,
        "shrinkage.rule1.family": args.rule1,
        "shrinkage.rule2.family": args.rule2,
        "level_scaling.enabled": True if args.level_scaling else None,
        "record_timing": True if args.record_timing else None,
    }
    for dotted, value in overrides.items():
        if value is not None:
            _set(merged, dotted, value)
    return RunConfig.model_validate(merged)


def load_sites(data_dir: Optional[str], files: Optional[Sequence[str]]) -> List[SiteDataset]:
    if files:
        paths = [Path(f) for f in files]
    elif data_dir:
        paths = sorted(Path(data_dir).glob("site_*.csv"), key=lambda f: site_sort_key(f.stem))
    else:
        raise ValidationError("pass --data DIR or --sites FILE ...")
    if not paths:
        raise ValidationError(f"no site_*.csv files in {data_dir}")
    datasets = []
    for path in paths:
        raw, _ = read_matrix(path)
        datasets.append(SiteDataset(path.stem, raw))
    return datasets


def _resolve_rounds(args: argparse.Namespace, datasets: Sequence[SiteDataset], config: RunConfig) -> int:
    if args.rounds != "auto":
        try:
            rounds = int(args.rounds)
        except ValueError:
            raise ValidationError(f"--rounds must be an integer or 'auto', got {args.rounds!r}")
        if rounds < 1:
            raise ValidationError("--rounds must be >= 1")
        return rounds
    s0 = config.shrinkage.s0_hint
    if s0 is None:
        raise ValidationError("--rounds auto requires --s0")
    sizes = [d.n_m for d in datasets]
    return protocol.suggest_rounds(len(datasets), datasets[0].p, min(sizes), sum(sizes), s0)


def write_estimate(directory: Path, estimate) -> None:
    write_matrix(directory / "gamma_hat.csv", estimate.gamma_hat)
    write_matrix(directory / "levels1.csv", estimate.levels1)
    write_matrix(directory / "levels2.csv", estimate.levels2)
    for m in range(estimate.M):
        write_matrix(directory / f"lambda_hat_{m}.csv", estimate.lambda_hats[m])
        write_matrix(directory / f"omega_tilde_{m}.csv", estimate.omega_tildes[m])


def cmd_run(args: argparse.Namespace) -> int:
    out = Path(args.out)
    datasets = load_sites(args.data, args.sites)
    config = resolve_run_config(args)
    rounds = _resolve_rounds(args, datasets, config)
    config = config.model_copy(update={"rounds": rounds})

    estimates, ledger = protocol.run_iteheat(datasets, rounds, config)

    for estimate in estimates:
        write_estimate(out / f"round_{estimate.round}", estimate)
    final = estimates[-1]
    for name in sorted(p.name for p in (out / f"round_{final.round}").glob("*.csv")):
        shutil.copyfile(out / f"round_{final.round}" / name, out / name)

    pd.DataFrame(
        ledger.rows(),
        columns=["round", "kind", "sender", "receiver", "scalars", "bytes", "millis"],
    ).to_csv(out / "ledger.csv", index=False)

    ordered = sorted(datasets, key=lambda d: site_sort_key(d.site_id))
    write_manifest(
        out,
        "run",
        {
            "config": config.model_dump(mode="json"),
            "rounds": rounds,
            "p": final.p,
            "sites": [{"index": m, "site_id": d.site_id, "n_m": d.n_m} for m, d in enumerate(ordered)],
            "inputs": {"data": args.data, "sites": args.sites},
            "estimates": [e.to_dict() for e in estimates],
            "ledger": {"total_scalars": ledger.total_scalars, "total_bytes": ledger.total_bytes},
        },
    )

    table = Table(title=f"distheat run ({len(datasets)} sites, p={final.p}, T={rounds})")
    for column in ("round", "gamma nonzero", "lambda nonzero", "scalars", "bytes"):
        table.add_column(column, justify="right")
    for estimate in estimates:
        entry = ledger.round_entry(estimate.round)
        counts = estimate.support_counts()
        table.add_row(
            str(estimate.round),
            str(counts["gamma_nonzero"]),
            str(counts["lambda_nonzero"]),
            str(entry.total_scalars),
            str(entry.total_bytes),
        )
    console.print(table)
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _load_stack(directory: Path, prefix: str, M: int) -> List[np.ndarray]:
    return [read_matrix(directory / f"{prefix}_{m}.csv")[0] for m in range(M)]


def cmd_eval(args: argparse.Namespace) -> int:
    est_dir, truth_dir = Path(args.estimate), Path(args.truth)
    manifest = read_manifest(est_dir)
    sizes = [site["n_m"] for site in manifest["sites"]]
    M = len(sizes)

    truth = PrecisionEnsemble.from_sample_sizes(_load_stack(truth_dir, "omega", M), sizes)
    final = PrecisionEnsemble.from_sample_sizes(_load_stack(est_dir, "omega_tilde", M), sizes)
    rounds = sorted(
        (int(d.name.split("_")[1]) for d in est_dir.glob("round_*") if d.is_dir()),
    )
    series = [
        PrecisionEnsemble.from_sample_sizes(_load_stack(est_dir / f"round_{t}", "omega_tilde", M), sizes)
        for t in rounds
    ]

    out = Path(args.out) if args.out else est_dir
    reports = {}
    rows = []
    for kind in (LossKind.L1r, LossKind.L2r):
        report = evalbench.evaluate(final, truth, r=args.r, kind=kind, series=series or None)
        reports[kind.value] = report.model_dump(mode="json")
        for t, reductions in zip(rounds, report.series or []):
            for reduction, value in reductions.items():
                rows.append({"kind": kind.value, "t": t, "reduction": reduction.value, "value": value})

    pd.DataFrame(rows, columns=["kind", "t", "reduction", "value"]).to_csv(
        out / "loss_series.csv", index=False, float_format=settings.MATRIX_FLOAT_FORMAT
    )
    write_manifest(
        out,
        "eval",
        {"estimate": str(est_dir), "truth": str(truth_dir), "r": args.r, "reports": reports},
        name="loss_report.json",
    )

    table = Table(title=f"integrative loss (r={args.r:g})")
    table.add_column("kind")
    for reduction in reports[LossKind.L1r.value]["reductions"]:
        table.add_column(reduction, justify="right")
    for kind, report in reports.items():
        table.add_row(kind, *(f"{v:.6g}" for v in report["reductions"].values()))
    console.print(table)
    return EXIT_OK


# ---------------------------------------------------------------- bench


def cmd_bench(args: argparse.Namespace) -> int:
    out = Path(args.out)
    grid = ExperimentGrid(
        n0=args.n0,
        p=args.p,
        M=args.M,
        hete_ratio=args.hete_ratio,
        graph=[GRAPH_CHOICES[g] for g in args.graph],
        rule=args.rule,
        rounds=args.rounds,
        kappa=args.kappa,
        r=args.r,
        target_degree=args.degree,
        include_baseline=not args.no_baseline,
        level_scaling=args.level_scaling,
    )
    results = evalbench.run_experiment(grid, args.reps, seed=args.seed, out_dir=out, threads=args.threads)
    plot_loss_series(results, out / "loss_vs_round.svg")
    write_manifest(
        out,
        "bench",
        {
            "grid": grid.model_dump(mode="json"),
            "replications": args.reps,
            "seed": args.seed,
            "summary_statistic": "median",
            "spread_statistic": "iqr",
        },
    )
    console.print(f"[bold]bench[/bold] wrote {len(results)} rows -> {out / 'results.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- rounds


def cmd_rounds(args: argparse.Namespace) -> int:
    N = args.N if args.N is not None else args.n * args.M
    rounds = protocol.suggest_rounds(args.M, args.p, args.n, N, args.s0)
    console.print(rounds)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distheat", description=__doc__.splitlines()[1])
    parser.add_argument("--version", action="version", version=f"distheat {__version__}")
    parser.add_argument("--debug", action="store_true", help="human-readable debug logs")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic heterogeneous ensemble and site data")
    synth.add_argument("--p", type=int, required=True)
    synth.add_argument("--M", type=int, required=True)
    synth.add_argument("--n0", type=int, required=True)
    synth.add_argument("--hete-ratio", type=float, default=0.0)
    synth.add_argument("--graph", choices=sorted(GRAPH_CHOICES), default="er")
    synth.add_argument("--degree", type=float, default=3.0, help="expected degree (er) or bandwidth (banded)")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--threads", type=int, default=settings.THREADS)
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=cmd_synth)

    run = sub.add_parser("run", help="distributed estimation over site CSVs")
    run.add_argument("--data", help="directory holding site_<m>.csv files")
    run.add_argument("--sites", nargs="+", help="explicit site CSV files")
    run.add_argument("--out", required=True)
    run.add_argument("--config", help="JSON run config; flags override it")
    run.add_argument("--rounds", default="1", help="integer or 'auto' (needs --s0)")
    run.add_argument("--s0", type=int)
    run.add_argument("--kappa", type=float)
    run.add_argument("--c-lambda", type=float)
    run.add_argument("--lambda-mode", choices=["default", "cv"])
    run.add_argument("--delta", type=float)
    run.add_argument("--rule1", choices=RULE_CHOICES)
    run.add_argument("--rule2", choices=RULE_CHOICES)
    run.add_argument("--level-scaling", action="store_true")
    run.add_argument("--record-timing", action="store_true")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int)
    run.set_defaults(handler=cmd_run)

    ev = sub.add_parser("eval", help="integrative losses against ground truth")
    ev.add_argument("--estimate", required=True, help="output directory of 'run'")
    ev.add_argument("--truth", required=True, help="directory holding omega_<m>.csv")
    ev.add_argument("--r", type=float, choices=[1.0, 2.0], default=1.0)
    ev.add_argument("--out")
    ev.set_defaults(handler=cmd_eval)

    bench = sub.add_parser("bench", help="simulation grid with replications")
    bench.add_argument("--n0", type=int, nargs="+", default=[400])
    bench.add_argument("--p", type=int, nargs="+", default=[100])
    bench.add_argument("--M", type=int, nargs="+", default=[5])
    bench.add_argument("--hete-ratio", type=float, nargs="+", default=[0.0])
    bench.add_argument("--graph", choices=sorted(GRAPH_CHOICES), nargs="+", default=["er"])
    bench.add_argument("--rule", choices=RULE_CHOICES, nargs="+", default=["scad"])
    bench.add_argument("--rounds", type=int, default=2)
    bench.add_argument("--kappa", type=float, default=0.0)
    bench.add_argument("--r", type=float, choices=[1.0, 2.0], default=1.0)
    bench.add_argument("--degree", type=float, default=3.0)
    bench.add_argument("--reps", type=int, default=8)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--threads", type=int, default=settings.THREADS)
    bench.add_argument("--no-baseline", action="store_true")
    bench.add_argument("--level-scaling", action="store_true", help="pick a level multiplier on held-out rows")
    bench.add_argument("--out", required=True)
    bench.set_defaults(handler=cmd_bench)

    rounds = sub.add_parser("rounds", help="suggested number of refinement rounds")
    rounds.add_argument("--M", type=int, required=True)
    rounds.add_argument("--p", type=int, required=True)
    rounds.add_argument("--n", type=float, required=True, help="smallest site sample size")
    rounds.add_argument("--N", type=float, help="total sample size (default n*M)")
    rounds.add_argument("--s0", type=int, required=True)
    rounds.set_defaults(handler=cmd_rounds)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help/--version
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK

    configure_logging(debug=args.debug or None, level=args.log_level, command=args.command)
    try:
        return args.handler(args)
    except Exception as exc:
        return handle_exception(exc)


if __name__ == "__main__":
    sys.exit(main())
