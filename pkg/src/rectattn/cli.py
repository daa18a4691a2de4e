"""Command-line entry point: gen / run / sweep / plot / verify."""

import argparse
import json
import sys
from pathlib import Path

from . import verify as verify_mod
from .errors import RectAttnError
from .harness import (ExperimentConfig, SyntheticSpec, gen_synthetic, run_experiment,
                      save_problem, sweep_sparsity)
from .masks import SparsityConfig
from .plots import render_plots
from .rectify import VARIANTS


def _add_synthetic_flags(parser):
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--tv", type=int, default=256, help="video token count")
    parser.add_argument("--tt", type=int, default=16, help="text token count")
    parser.add_argument("--d", type=int, default=32, help="head dimension")
    parser.add_argument("--block", type=int, default=8, help="block size B")
    parser.add_argument("--grid", type=str, default=None,
                        help="t,h,w token grid (default: 1,1,tv factorization)")
    parser.add_argument("--alpha", type=float, default=1.0, help="locality strength")
    parser.add_argument("--beta", type=float, default=2.0, help="text key norm boost")
    parser.add_argument("--sigma", type=float, default=0.3, help="intra-block noise")
    parser.add_argument("--precision", choices=["single", "double"], default="single")


def _add_sparsity_flags(parser):
    parser.add_argument("--topk", type=float, default=0.2, help="top-k retention fraction")
    parser.add_argument("--p", type=float, default=0.3, help="cumulative weight threshold")
    parser.add_argument("--adj-radius", type=int, default=1)
    parser.add_argument("--force-text", action=argparse.BooleanOptionalAction, default=True)
    parser.add_argument("--variants", type=str,
                        default="full,sparse-unrectified,sparse-rectified",
                        help=f"comma list from {','.join(VARIANTS)}")
    parser.add_argument("--morton", action="store_true",
                        help="reorder video tokens by Morton order before running")
    parser.add_argument("--no-gapr-agreement", action="store_true",
                        help="skip the exact-vs-relaxed GAPR agreement diagnostic")


def _parse_grid(raw: str | None, t_v: int):
    if raw is None:
        return (1, 1, t_v)
    parts = tuple(int(x) for x in raw.split(","))
    if len(parts) != 3:
        raise RectAttnError(f"--grid expects t,h,w, got {raw!r}")
    return parts


def _spec_from_args(args) -> SyntheticSpec:
    return SyntheticSpec(seed=args.seed, t_v=args.tv, t_t=args.tt, d=args.d,
                         block=args.block, grid_dims=_parse_grid(args.grid, args.tv),
                         locality_strength=args.alpha, text_norm_boost=args.beta,
                         intra_block_noise=args.sigma, precision=args.precision)


def _config_from_args(args) -> ExperimentConfig:
    if args.config is not None:
        try:
            payload = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise RectAttnError(f"cannot read config {args.config}: {exc}") from exc
        synthetic = payload.get("synthetic")
        spec = None
        if synthetic is not None:
            if "grid_dims" in synthetic:
                synthetic["grid_dims"] = tuple(synthetic["grid_dims"])
            spec = SyntheticSpec(**synthetic)
        sparsity = SparsityConfig(**payload.get("sparsity", {}))
        return ExperimentConfig(
            synthetic=spec, problem_paths=payload.get("problem_paths"),
            sparsity=sparsity,
            variants=tuple(payload.get("variants", ("full", "sparse-rectified"))),
            output_dir=args.out or payload.get("output_dir"),
            morton_reorder=payload.get("morton_reorder", False),
            compute_gapr_agreement=payload.get("compute_gapr_agreement", True))
    sparsity = SparsityConfig(top_k_fraction=args.topk, weight_threshold=args.p,
                              adjacency_radius=args.adj_radius,
                              force_text_blocks=args.force_text)
    variants = tuple(v.strip().lower() for v in args.variants.split(",") if v.strip())
    problem_paths = None
    spec = None
    if args.problem is not None:
        manifest = Path(args.problem) / "problem.json"
        try:
            problem_paths = json.loads(manifest.read_text())
        except OSError as exc:
            raise RectAttnError(f"cannot read {manifest}: {exc}") from exc
    else:
        spec = _spec_from_args(args)
    return ExperimentConfig(synthetic=spec, problem_paths=problem_paths,
                            sparsity=sparsity, variants=variants, output_dir=args.out,
                            morton_reorder=args.morton,
                            compute_gapr_agreement=not args.no_gapr_agreement)


def cmd_gen(args) -> int:
    problem = gen_synthetic(_spec_from_args(args))
    manifest = save_problem(problem, args.out)
    print(f"wrote problem ({problem.t_v} video + {problem.t_t} text tokens, "
          f"d={problem.d}, B={problem.block}) to {args.out}")
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    reports = run_experiment(config)
    for variant, report in reports.items():
        print(f"{variant}: normalized_l1={report.normalized_l1:.6g} "
              f"cosine={report.cosine_similarity:.9f} sparsity={report.sparsity:.4f} "
              f"checks_passed={report.checks_passed}")
    return 0


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    fractions = [float(x) for x in args.topk_list.split(",") if x.strip()]
    text = sweep_sparsity(config, fractions)
    sys.stdout.write(text)
    if config.output_dir is not None:
        for path in render_plots(Path(config.output_dir) / "sweep.csv", config.output_dir):
            print(f"wrote {path}")
    return 0


def cmd_plot(args) -> int:
    for path in render_plots(args.csv, args.out):
        print(f"wrote {path}")
    return 0


def cmd_verify(args) -> int:
    return verify_mod.run_verification(seed=args.seed, verbose=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rectattn",
                                     description="Rectified block-sparse attention harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic problem as RSAT files")
    _add_synthetic_flags(p_gen)
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.set_defaults(func=cmd_gen)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", type=str, default=None, help="experiment config JSON")
    p_run.add_argument("--problem", type=str, default=None,
                       help="directory with problem.json + RSAT files")
    _add_synthetic_flags(p_run)
    _add_sparsity_flags(p_run)
    p_run.add_argument("--out", type=str, default=None, help="report directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep top-k fractions")
    p_sweep.add_argument("--config", type=str, default=None)
    p_sweep.add_argument("--problem", type=str, default=None)
    _add_synthetic_flags(p_sweep)
    _add_sparsity_flags(p_sweep)
    p_sweep.add_argument("--topk-list", type=str, default="0.5,0.2,0.1")
    p_sweep.add_argument("--out", type=str, default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render SVG charts from a sweep CSV")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(func=cmd_plot)

    p_verify = sub.add_parser("verify", help="run oracle-equivalence and invariant checks")
    p_verify.add_argument("--seed", type=int, default=42)
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RectAttnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
