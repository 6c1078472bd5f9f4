"""Command-line entry point.

Exit codes: 0 success, 1 a counterfactual test failed, 2 input error,
3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, load_config_file
from .core import InputError, Stage, read_articles, read_prices_csv
from .counterfactual import (
    DuplicateInjectionSpec,
    ImpulseSpec,
    reports_to_json,
    run_duplicate_test,
    run_impulse_test,
)
from .evaluate import format_table, summarise_metrics
from .pipeline import (
    _by_entity,
    config_consistency,
    design_rows_to_csv,
    run_design_study,
    run_metrics,
    run_pipeline,
    run_sweep,
    series_csv,
)
from .consistency import composite_score, rank_rows, rows_to_csv
from .smooth import centered_moving_average
from .synth import SynthParams, make_panel

OUT_ENV = "SENTRECON_OUT"
EXIT_OK, EXIT_TEST_FAILED, EXIT_INPUT, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("sentrecon")


def _digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_paths(*paths: str | None) -> None:
    for p in paths:
        if p is None:
            continue
        if not os.path.isfile(p) or not os.access(p, os.R_OK):
            raise InputError(f"{p}: not a readable file")


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _inputs(args: argparse.Namespace) -> dict:
    d = {"articles": {"path": args.articles, "sha256": _digest(args.articles)}}
    if getattr(args, "prices", None):
        d["prices"] = {"path": args.prices, "sha256": _digest(args.prices)}
    if args.config:
        d["config"] = {"path": args.config, "sha256": _digest(args.config)}
    return d


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_reconstruct(args: argparse.Namespace) -> int:
    _check_paths(args.articles, args.config)
    cf = load_config_file(args.config)
    articles = read_articles(args.articles)
    cfg = cf.pipeline
    run = run_pipeline(cfg, articles)
    out = _out_dir(args)
    sdir = out / "series"
    sdir.mkdir(exist_ok=True)
    stages = [s.value for s in Stage] if args.stage == "all" else [args.stage]
    for ent, staged in run.series.items():
        if args.format == "json":
            payload = {
                "entity_id": ent,
                "labels": [staged.aggregated.grid.label(k).isoformat() for k in range(run.grid.n_bins)],
                "counts": staged.aggregated.counts.tolist(),
                **{st: [None if math.isnan(v) else float(v) for v in staged.stage(st).values] for st in stages},
            }
            _write(sdir / f"{ent}.json", json.dumps(payload, indent=1) + "\n")
        else:
            text = series_csv(staged)
            if args.stage != "all":
                keep = ["bin", "label", "count", args.stage]
                rows = list(csv.DictReader(io.StringIO(text)))
                buf = io.StringIO()
                w = csv.DictWriter(buf, keep, extrasaction="ignore", lineterminator="\n")
                w.writeheader()
                w.writerows(rows)
                text = buf.getvalue()
            _write(sdir / f"{ent}.csv", text)
    manifest = {
        "command": "reconstruct",
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "seed": args.seed if args.seed is not None else cf.seed,
        "inputs": _inputs(args),
        "grid": run.grid.params(),
        "n_bins": run.grid.n_bins,
        "stages": stages,
        "entities": sorted(run.series),
        "errors": run.errors,
        "diagnostics": dict(sorted(run.diagnostics.items())),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"reconstructed {len(run.series)} entities over {run.grid.n_bins} bins -> {out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    _check_paths(args.articles, args.config)
    cf = load_config_file(args.config)
    articles = read_articles(args.articles)
    out = _out_dir(args)
    run = run_pipeline(cf.pipeline, articles)
    per = run_metrics(run)
    summ = summarise_metrics(per)
    payload = {
        "config_digest": cf.pipeline.digest(),
        "entities": {m.entity_id: m.__dict__ for m in per},
        "summary": {k: (v.to_dict() if v else None) for k, v in summ.items()},
    }
    _write(out / "metrics.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(format_table([(k, v.row()) for k, v in summ.items() if v is not None]))
    if args.design:
        rows = run_design_study(cf.sweep, articles, run.grid)
        _write(out / "design.csv", design_rows_to_csv(rows))
        print(f"design study: {len(rows)} rows -> {out / 'design.csv'}")
    return EXIT_OK


def cmd_counterfactual(args: argparse.Namespace) -> int:
    _check_paths(args.articles, args.config)
    cf = load_config_file(args.config)
    articles = read_articles(args.articles)
    out = _out_dir(args)
    cfg = cf.pipeline
    seed = args.seed if args.seed is not None else cf.seed
    grid = cfg.grid.build(articles)
    k0 = args.k0 if args.k0 is not None else grid.n_bins // 2
    if not 0 <= k0 < grid.n_bins:
        raise InputError(f"--k0 {k0} outside grid of {grid.n_bins} bins")
    tau = args.tolerance if args.tolerance is not None else 1e-9
    spec = ImpulseSpec(k0, args.delta, args.scheme, tau)
    override = centered_moving_average if args.acausal_self_test else None
    stage = Stage(args.stage) if args.stage != "all" else None
    imp = run_impulse_test(cfg, articles, spec, grid, stage, override)
    dup = run_duplicate_test(
        cfg, articles, DuplicateInjectionSpec(args.dup_fraction, 1, args.dup_jitter, seed), grid, stage
    )
    text = reports_to_json(imp, dup)
    _write(out / "counterfactual.json", text)
    med_no, med_yes = dup.medians()
    print(f"impulse: pass rate {imp.pass_rate:.3f}, max D_pre {imp.max_d_pre:.3g} (tau {tau:g})")
    print(f"duplicates: median D_no_detect {med_no:.4f}, median D_detect {med_yes:.4f}")
    return EXIT_OK if imp.ok else EXIT_TEST_FAILED


def cmd_consistency(args: argparse.Namespace) -> int:
    _check_paths(args.articles, args.prices, args.config)
    cf = load_config_file(args.config)
    articles = _by_entity(read_articles(args.articles))
    prices = read_prices_csv(args.prices)
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else cf.seed
    grid = cf.sweep.base.grid.build([a for v in articles.values() for a in v])
    rows = []
    for i, cfg in enumerate(cf.sweep):
        run = run_pipeline(cfg, articles, grid)
        rows.append(config_consistency(cf.sweep.label(i), run, prices, cf.study, seed)[0])
    rows = rank_rows(composite_score(rows))
    text = rows_to_csv(rows)
    if args.format == "json":
        recs = list(csv.DictReader(io.StringIO(text)))
        _write(out / "consistency.json", json.dumps(recs, indent=2) + "\n")
    else:
        _write(out / "consistency.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    _check_paths(args.articles, args.prices, args.config)
    cf = load_config_file(args.config)
    articles = read_articles(args.articles)
    prices = read_prices_csv(args.prices) if args.prices else None
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else cf.seed
    jobs = args.jobs or os.cpu_count() or 1
    results = run_sweep(cf.sweep, articles, out, prices, cf.study, seed, jobs)
    failed = sum(1 for r in results if r.errors)
    print(f"{len(results)} configurations -> {out} ({failed} with entity errors)")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    try:
        params = SynthParams(
            n_entities=args.entities,
            n_bins=args.bins,
            sparsity=args.sparsity,
            duplicate_rate=args.duplicate_rate,
            ambiguity=args.ambiguity,
            price_lag=args.lag,
            snr=args.snr,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    panel = make_panel(params, args.seed or 0)
    paths = panel.write(out)
    print(f"{len(panel.articles)} articles for {params.n_entities} entities -> {paths['articles']}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sentrecon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, articles=True, prices=False):
        sp.add_argument("--config", help="TOML config file")
        if articles:
            sp.add_argument("--articles", required=True, help="articles JSONL or CSV")
        if prices:
            sp.add_argument("--prices", required=prices == "required", help="prices CSV")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("reconstruct", help="run the reconstruction pipeline")
    common(sp)
    sp.add_argument("--stage", choices=("all", "aggregated", "filled", "smoothed"), default="all")
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("evaluate", help="label-free metrics and design-study tables")
    common(sp)
    sp.add_argument("--design", action="store_true", help="also run the stage-by-stage design study")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("counterfactual", help="impulse causality and duplicate robustness tests")
    common(sp)
    sp.add_argument("--stage", choices=("all", "aggregated", "filled", "smoothed"), default="all",
                    help="stage to test (default: the configured output stage)")
    sp.add_argument("--tolerance", type=float, default=None, help="impulse tolerance tau (default 1e-9)")
    sp.add_argument("--k0", type=int, default=None, help="impulse bin (default: middle of the grid)")
    sp.add_argument("--delta", type=float, default=0.8)
    sp.add_argument("--scheme", choices=("additive_existing", "synthetic_observation"), default="additive_existing")
    sp.add_argument("--dup-fraction", type=float, default=0.3)
    sp.add_argument("--dup-jitter", type=float, default=0.05)
    sp.add_argument("--acausal-self-test", action="store_true",
                    help="swap in a centered moving average to check the harness catches it")
    sp.set_defaults(func=cmd_counterfactual)

    sp = sub.add_parser("consistency", help="sentiment-price consistency study over the sweep")
    common(sp, prices="required")
    sp.set_defaults(func=cmd_consistency)

    sp = sub.add_parser("sweep", help="run every configuration and write the result tree")
    common(sp, prices=True)
    sp.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("synth", help="generate a synthetic panel")
    sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--entities", type=int, default=10)
    sp.add_argument("--bins", type=int, default=80)
    sp.add_argument("--sparsity", type=float, default=0.3)
    sp.add_argument("--duplicate-rate", type=float, default=0.0)
    sp.add_argument("--ambiguity", type=float, default=0.2)
    sp.add_argument("--lag", type=int, default=3)
    sp.add_argument("--snr", type=float, default=1.0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
