"""Command-line front end.

Exit codes: 0 success, 1 internal failure or failed verification, 2 usage or
validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import m3_forward, mqt_forward
from .config import load_config
from .connector import (
    ConnectorParams,
    FeatureGrid,
    QueryBank,
    bank_capacity,
    budget_menu,
    get_regime,
    pcqr_forward,
    pool_grid,
    route_budget,
)
from .costmodel import ModelConfig, Workload, figure1_table, total_report, IMAGE_TEXT_PREFIX, VIDEO_TEXT_PREFIX
from .iofmt import (
    AttentionWeights,
    FormatError,
    json_report,
    profile_csv,
    read_attw,
    read_fgrid,
    table_csv,
    write_attw,
    write_fgrid,
)
from .spectral import attention_footprint, cumulative_concentration, radial_profile
from .synth import KINDS, parse_shape, synth_grid
from .verify import FIGURE1_COLUMNS, SUITES, run_suites


class UsageError(Exception):
    pass


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _route_row(method: str, budget: int, regime: str) -> list:
    if method == "parcel":
        r = route_budget(budget, regime)
        return [budget, r.n_anchors, r.n_queries, r.kernel]
    if method == "mqt":
        return [budget, 0, budget, ""]
    side = get_regime(regime).source_side
    return [budget, budget, 0, side // int(round(budget**0.5))]


def cmd_route(args) -> int:
    if args.table:
        rows = ["budget,anchors,queries,kernel"]
        rows += [",".join(map(str, _route_row(args.method, b, args.regime))) for b in budget_menu(args.method, args.regime)]
    else:
        if args.method != "parcel":
            raise UsageError("--budget routing applies to --method parcel; use --table for baseline menus")
        rows = [",".join(map(str, _route_row("parcel", args.budget, args.regime)))]
    _emit("\n".join(rows) + "\n", args.out)
    return 0


def _model_config(regime: str) -> ModelConfig:
    reg = get_regime(regime)
    return ModelConfig(vit_tokens=reg.source_tokens)


def cmd_cost(args) -> int:
    cfg = _model_config(args.regime)
    if args.figure1:
        rows = figure1_table(cfg, args.mode)
        if args.format == "csv":
            _emit(table_csv(rows, FIGURE1_COLUMNS), args.out)
        else:
            _emit(json_report("parcel cost", __version__, {"figure1": True, "mode": args.mode}, {"rows": rows}), args.out)
        return 0
    if args.budget is None:
        raise UsageError("cost needs --budget or --figure1")
    if args.frames < 1:
        raise UsageError("--frames must be at least 1")
    prefix = args.text_prefix
    if prefix is None:
        prefix = IMAGE_TEXT_PREFIX if args.frames == 1 else VIDEO_TEXT_PREFIX
    workload = Workload(args.frames, args.budget, prefix, args.mode, args.regime)
    report = total_report(cfg, workload)
    if args.format == "csv":
        row = {
            "budget": args.budget, "frames": args.frames, "mode": args.mode, "text_prefix": prefix,
            "total_flops": report.total, "tflops": str(report.tflops),
            "kv_bytes": report.kv_bytes, "kv_mb": report.kv_mb,
        }
        _emit(table_csv([row], list(row)), args.out)
    else:
        inputs = {"budget": args.budget, "frames": args.frames, "mode": args.mode,
                  "regime": args.regime, "text_prefix": prefix}
        _emit(json_report("parcel cost", __version__, inputs, report.to_dict()), args.out)
    return 0


def _load_grid(args) -> tuple[FeatureGrid, dict]:
    if args.input and args.synth:
        raise UsageError("give either --in or --synth, not both")
    if args.input:
        return read_fgrid(args.input), {"in": str(args.input)}
    if args.synth:
        shape = parse_shape(args.shape)
        return synth_grid(args.synth, shape, args.seed), {"synth": args.synth, "shape": args.shape, "seed": args.seed}
    raise UsageError("an input grid is required: --in FILE or --synth KIND")


def cmd_spectral(args) -> int:
    cfg = load_config(args.config, epsilon=args.epsilon)
    eps = cfg.epsilon
    grid, inputs = _load_grid(args)
    inputs["analysis"] = args.analysis
    if args.analysis == "footprint":
        if not args.attn:
            raise UsageError("footprint analysis needs --attn")
        att = read_attw(args.attn)
        if (att.height, att.width) != (grid.height, grid.width):
            raise UsageError(f"{args.attn}: attention grid {att.height}x{att.width} does not match input {grid.height}x{grid.width}")
        inputs["attn"] = str(args.attn)
        profile = attention_footprint(grid, att.weights, eps)
    else:
        if args.pool > 1:
            grid = pool_grid(grid, args.pool)
            inputs["pool"] = args.pool
        profile = radial_profile(grid, eps)
        if args.analysis == "concentration":
            profile = cumulative_concentration(profile)
    zero = not np.any(profile.values)
    if zero:
        csv_text = profile_csv([], [])
    else:
        csv_text = profile_csv(profile.radii, profile.values)
    meta = {
        "analysis": args.analysis,
        "r_max": profile.r_max,
        "epsilon": eps,
        "zero_energy": zero,
        "grid": [grid.height, grid.width, grid.channels],
        "bins": len(profile.radii) if not zero else 0,
    }
    _emit(csv_text, args.out)
    meta_path = args.meta or (str(Path(args.out).with_suffix(".json")) if args.out else None)
    if meta_path:
        Path(meta_path).write_text(json_report("parcel spectral", __version__, inputs, meta))
    return 0


def _connector_setup(args, grid: FeatureGrid, method: str):
    cfg = load_config(args.config, width=args.width, heads=args.heads, mlp_hidden=args.mlp_hidden)
    if grid.channels != cfg.width:
        raise UsageError(f"grid has {grid.channels} channels but the connector width is {cfg.width}")
    rng = np.random.default_rng(args.seed)
    params = ConnectorParams.init(cfg.width, cfg.heads, cfg.mlp_hidden, rng)
    bank = QueryBank.init(bank_capacity(method, args.regime), cfg.width, rng)
    return params, bank


def _write_outputs(tokens: np.ndarray, weights: np.ndarray | None, grid: FeatureGrid, args) -> dict:
    active = weights is not None and len(weights) > 0
    if active and not args.weights:
        raise UsageError("--weights is required when query tokens are active")
    write_fgrid(FeatureGrid(tokens[None, :, :]), args.out)
    summary = {"tokens": str(args.out), "shape": [1, tokens.shape[0], tokens.shape[1]]}
    if active:
        write_attw(AttentionWeights(weights, grid.height, grid.width), args.weights)
        summary["weights"] = str(args.weights)
    else:
        summary["weights"] = None
        print(f"note: budget {args.budget} routes no query tokens; no weights file written", file=sys.stderr)
    return summary


def cmd_pcqr(args) -> int:
    grid = read_fgrid(args.input)
    params, bank = _connector_setup(args, grid, "parcel")
    route = route_budget(args.budget, args.regime)
    out = pcqr_forward(grid, route, bank, params)
    summary = _write_outputs(out.assembled, out.weights, grid, args)
    summary.update(anchors=route.n_anchors, queries=route.n_queries, kernel=route.kernel)
    inputs = {"in": str(args.input), "budget": args.budget, "seed": args.seed, "regime": args.regime}
    sys.stdout.write(json_report("parcel pcqr", __version__, inputs, summary))
    return 0


def cmd_baseline(args) -> int:
    grid = read_fgrid(args.input)
    if args.mode == "m3":
        tokens, weights = m3_forward(grid, args.budget), None
    else:
        params, bank = _connector_setup(args, grid, "mqt")
        res = mqt_forward(grid, args.budget, bank, params, args.regime)
        tokens, weights = res.tokens, res.weights
    summary = _write_outputs(tokens, weights, grid, args)
    inputs = {"in": str(args.input), "mode": args.mode, "budget": args.budget, "seed": args.seed}
    sys.stdout.write(json_report("parcel baseline", __version__, inputs, summary))
    return 0


def cmd_synth(args) -> int:
    grid = synth_grid(args.kind, parse_shape(args.shape), args.seed)
    write_fgrid(grid, args.out)
    return 0


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    results = run_suites(names, golden=args.golden, n_seeds=args.seeds)
    summary, failed = {}, []
    for suite, props in results.items():
        summary[suite] = {}
        for prop, (ok, detail) in props.items():
            summary[suite][prop] = {"passed": bool(ok), "detail": detail}
            if not ok:
                failed.append(prop)
    summary_doc = {"passed": not failed, "failed": failed, "suites": summary}
    sys.stdout.write(json.dumps(summary_doc, indent=2, sort_keys=True) + "\n")
    for prop in failed:
        print(f"FAILED: {prop}", file=sys.stderr)
    return 1 if failed else 0


def _add_connector_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regime", choices=["default", "high"], default="default")
    p.add_argument("--width", type=int, help="connector width D_v (overrides config)")
    p.add_argument("--heads", type=int)
    p.add_argument("--mlp-hidden", type=int)
    p.add_argument("--out", required=True, help="assembled tokens as a 1 x B x D FGRID file")
    p.add_argument("--weights", help="cross-attention weights as an ATTW file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parcel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON connector config (default: $PARCEL_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("route", help="budget -> (anchors, queries, pooling kernel)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--budget", type=int)
    g.add_argument("--table", action="store_true", help="enumerate the method's budget menu")
    p.add_argument("--regime", choices=["default", "high"], default="default")
    p.add_argument("--method", choices=["parcel", "mqt", "m3"], default="parcel")
    p.add_argument("--out")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("cost", help="prefill FLOPs and KV cache")
    p.add_argument("--budget", type=int)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--text-prefix", type=int)
    p.add_argument("--mode", choices=["parcel", "mqt", "m3"], default="parcel")
    p.add_argument("--regime", choices=["default", "high"], default="default")
    p.add_argument("--figure1", action="store_true", help="emit the budget 16/64/256 efficiency table")
    p.add_argument("--format", choices=["json", "csv"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("spectral", help="radial spectra, concentration and attention footprints")
    p.add_argument("--in", dest="input")
    p.add_argument("--synth", choices=KINDS, help="use a seeded synthetic grid instead of --in")
    p.add_argument("--shape", default="16x16x8", help="synthetic grid shape HxWxC")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attn", help="ATTW file for footprint analysis")
    p.add_argument("--analysis", choices=["radial", "concentration", "footprint"], default="radial")
    p.add_argument("--pool", type=int, default=1, help="average-pool by this kernel before analysis")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out", help="profile CSV (default stdout)")
    p.add_argument("--meta", help="JSON metadata path (default: --out with .json suffix)")
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("pcqr", help="run the connector on a grid file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--budget", type=int, required=True)
    _add_connector_flags(p)
    p.set_defaults(func=cmd_pcqr)

    p = sub.add_parser("baseline", help="run a reference connector (m3 or mqt)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mode", choices=["m3", "mqt"], required=True)
    p.add_argument("--budget", type=int, required=True)
    _add_connector_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("synth", help="write a seeded synthetic grid")
    p.add_argument("--kind", choices=KINDS, default="gaussian")
    p.add_argument("--shape", default="16x16x8")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="run built-in property suites")
    p.add_argument("--suite", choices=[*SUITES, "all"], default="all")
    p.add_argument("--golden", help="golden efficiency-table CSV (default: bundled copy)")
    p.add_argument("--seeds", type=int, default=20, help="seeds for gradient checks")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "format", "unset") is None:
        args.format = "csv" if args.figure1 else "json"
    try:
        return args.func(args)
    except (UsageError, FormatError, ValueError, OSError) as exc:
        print(f"parcel {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"parcel {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
