"""Synthetic problem generation, experiment execution, and sparsity sweeps.

PRNG contract: PCG64 seeded through ``numpy.random.SeedSequence(seed)``, with
one child stream per tensor spawned in the fixed order
(q_video_base, q_video_noise, k_video_base, k_video_noise, q_text, k_text, v),
so fixtures are portable across platforms for a pinned numpy version.

Deterministic artifacts (report JSON, CSV, SVG) never contain timings; wall
times go to a ``timings.json`` sidecar so repeated runs stay byte-identical.
"""

import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import AttentionProblem, full_attention_oracle, partition, pool_problem, reorder_morton
from .errors import ConfigError, IoError
from .masks import SparsityConfig
from .metrics import (AlignmentReport, cosine_similarity, gapr_condition_agreement,
                      normalized_l1, sparsity_and_flops)
from .rectify import VARIANTS, check_result_invariants, rectified_attention_pipeline
from .rsat import read_rsat, write_rsat

REPORT_SCHEMA_VERSION = 1
STREAM_NAMES = ("q_video_base", "q_video_noise", "k_video_base", "k_video_noise",
                "q_text", "k_text", "v")


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator knobs: locality (alpha) drives spatial-temporal attention
    decay, text_norm_boost (beta) scales text key norms, intra_block_noise
    (sigma) controls token-level deviation within video blocks."""

    seed: int
    t_v: int = 256
    t_t: int = 16
    d: int = 32
    block: int = 8
    grid_dims: tuple[int, int, int] = (4, 8, 8)
    locality_strength: float = 1.0
    text_norm_boost: float = 1.0
    intra_block_noise: float = 0.3
    precision: str = "single"

    def __post_init__(self):
        if min(self.t_v, self.t_t, self.d, self.block) < 1:
            raise ConfigError("all sizes must be >= 1")
        t, h, w = self.grid_dims
        if t * h * w != self.t_v:
            raise ConfigError(f"grid_dims product {t * h * w} != t_v={self.t_v}")
        if self.t_v % self.block != 0:
            raise ConfigError(f"t_v={self.t_v} not divisible by block={self.block}")
        if self.locality_strength < 0 or self.intra_block_noise < 0:
            raise ConfigError("locality_strength and intra_block_noise must be >= 0")
        if self.text_norm_boost < 1:
            raise ConfigError(f"text_norm_boost must be >= 1, got {self.text_norm_boost}")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be single or double, got {self.precision!r}")


def _sinusoidal_1d(coords: np.ndarray, dim: int) -> np.ndarray:
    """Classic sine/cosine positional encoding of integer coordinates."""
    out = np.zeros((coords.shape[0], dim), dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * (2 * np.arange(half + dim % 2) / max(dim, 1)))
    angles = coords[:, None] * freqs[None, :]
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles[:, :half])
    return out


def positional_embedding(grid_dims: tuple[int, int, int], d: int) -> np.ndarray:
    """3-D sinusoidal embedding of the row-major (t, h, w) token grid."""
    t, h, w = grid_dims
    d_h = d_w = d // 3
    d_t = d - 2 * (d // 3)
    tt, yy, xx = np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")
    parts = [_sinusoidal_1d(tt.ravel().astype(np.float64), d_t),
             _sinusoidal_1d(yy.ravel().astype(np.float64), d_h),
             _sinusoidal_1d(xx.ravel().astype(np.float64), d_w)]
    return np.concatenate(parts, axis=1)


def gen_synthetic(spec: SyntheticSpec) -> AttentionProblem:
    """Deterministic synthetic problem. Video tokens are a per-block Gaussian
    base plus sigma-scaled token noise plus alpha-scaled positional embedding;
    text queries/keys are independent Gaussians with keys scaled by beta; V is
    independent per token."""
    children = np.random.SeedSequence(spec.seed).spawn(len(STREAM_NAMES))
    rng = {name: np.random.Generator(np.random.PCG64(child))
           for name, child in zip(STREAM_NAMES, children)}
    n_blocks = spec.t_v // spec.block

    pos = spec.locality_strength * positional_embedding(spec.grid_dims, spec.d)
    block_of = np.repeat(np.arange(n_blocks), spec.block)

    q_base = rng["q_video_base"].standard_normal((n_blocks, spec.d))
    q_noise = rng["q_video_noise"].standard_normal((spec.t_v, spec.d))
    q_video = q_base[block_of] + spec.intra_block_noise * q_noise + pos

    k_base = rng["k_video_base"].standard_normal((n_blocks, spec.d))
    k_noise = rng["k_video_noise"].standard_normal((spec.t_v, spec.d))
    k_video = k_base[block_of] + spec.intra_block_noise * k_noise + pos

    q_text = rng["q_text"].standard_normal((spec.t_t, spec.d))
    k_text = spec.text_norm_boost * rng["k_text"].standard_normal((spec.t_t, spec.d))
    v = rng["v"].standard_normal((spec.t_v + spec.t_t, spec.d))

    dtype = np.float32 if spec.precision == "single" else np.float64
    return AttentionProblem(
        q_video=q_video.astype(dtype),
        q_text=q_text.astype(dtype),
        k=np.concatenate([k_video, k_text], axis=0).astype(dtype),
        v=v.astype(dtype),
        d=spec.d,
        block=spec.block,
        grid_dims=spec.grid_dims,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a problem source, sparsity knobs, and a variant set."""

    synthetic: SyntheticSpec | None = None
    problem_paths: dict | None = None
    sparsity: SparsityConfig = field(default_factory=SparsityConfig)
    variants: tuple = ("full", "sparse-unrectified", "sparse-rectified")
    output_dir: str | None = None
    morton_reorder: bool = False
    compute_gapr_agreement: bool = True

    def __post_init__(self):
        if (self.synthetic is None) == (self.problem_paths is None):
            raise ConfigError("exactly one of synthetic spec or problem paths is required")
        if not self.variants:
            raise ConfigError("at least one variant is required")
        for variant in self.variants:
            if variant not in VARIANTS:
                raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")


def load_problem(config: ExperimentConfig) -> AttentionProblem:
    if config.synthetic is not None:
        problem = gen_synthetic(config.synthetic)
    else:
        paths = config.problem_paths
        if "block" not in paths:
            raise IoError("problem paths are missing 'block'")
        arrays = {}
        for name in ("q_video", "q_text", "k", "v"):
            if name not in paths:
                raise IoError(f"problem paths are missing {name!r}")
            path = Path(paths[name])
            if not path.exists():
                raise IoError(f"missing input file: {path}")
            arrays[name] = read_rsat(path)
        grid_dims = tuple(paths["grid_dims"]) if paths.get("grid_dims") else None
        problem = AttentionProblem(
            q_video=arrays["q_video"], q_text=arrays["q_text"],
            k=arrays["k"], v=arrays["v"],
            d=int(paths.get("d", arrays["q_video"].shape[1])),
            block=int(paths["block"]), grid_dims=grid_dims)
    if config.morton_reorder:
        problem, _ = reorder_morton(problem)
    return problem


def run_variants(problem: AttentionProblem, sparsity: SparsityConfig, variants,
                 compute_gapr: bool = True) -> dict:
    """Run each variant against the double-precision dense reference.

    The ``full`` variant *is* the reference run: its reported error is exactly
    zero by definition. Returns ``{variant: AlignmentReport}``.
    """
    grid = partition(problem)
    q_all = np.concatenate([problem.q_video, problem.q_text], axis=0)
    t0 = time.perf_counter()
    _, reference = full_attention_oracle(q_all, problem.k, problem.v)
    reference_ms = (time.perf_counter() - t0) * 1e3

    gapr = None
    if compute_gapr:
        gapr = gapr_condition_agreement(problem, pool_problem(problem, grid), grid)

    reports = {}
    for variant in variants:
        if variant == "full":
            flops_dense = 4 * problem.t_v * problem.k.shape[0] * problem.d
            reports[variant] = AlignmentReport(
                variant=variant,
                normalized_l1=normalized_l1(reference, reference),
                cosine_similarity=cosine_similarity(reference, reference),
                sparsity=0.0, flops_full=flops_dense, flops_sparse=flops_dense,
                flops_overhead=0,
                wall_time_ms={"reference": reference_ms},
                gapr_agreement=gapr, checks_passed=True)
            continue
        result = rectified_attention_pipeline(problem, sparsity, variant=variant)
        output = np.concatenate([result.output.o_video, result.output.o_text], axis=0)
        sparsity_ratio, flops_full, flops_sparse, flops_overhead = sparsity_and_flops(
            result.sparse_mask, result.grid, problem.d)
        reports[variant] = AlignmentReport(
            variant=variant,
            normalized_l1=normalized_l1(output, reference),
            cosine_similarity=cosine_similarity(output, reference),
            sparsity=sparsity_ratio,
            flops_full=flops_full, flops_sparse=flops_sparse,
            flops_overhead=flops_overhead,
            wall_time_ms=dict(result.accounting.stage_wall_ms),
            gapr_agreement=gapr,
            checks_passed=check_result_invariants(result))
    return reports


CSV_FIELDS = ("top_k_fraction", "variant", "normalized_l1", "cosine_similarity",
              "sparsity", "flops_full", "flops_sparse", "flops_overhead",
              "gapr_agreement", "checks_passed")


def _report_row(top_k_fraction: float, report: AlignmentReport) -> dict:
    return {
        "top_k_fraction": repr(float(top_k_fraction)),
        "variant": report.variant,
        "normalized_l1": repr(report.normalized_l1),
        "cosine_similarity": repr(report.cosine_similarity),
        "sparsity": repr(report.sparsity),
        "flops_full": report.flops_full,
        "flops_sparse": report.flops_sparse,
        "flops_overhead": report.flops_overhead,
        "gapr_agreement": "" if report.gapr_agreement is None else repr(report.gapr_agreement),
        "checks_passed": int(report.checks_passed),
    }


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        tmp.replace(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _report_json(config: ExperimentConfig, report: AlignmentReport) -> str:
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "variant": report.variant,
        "problem": asdict(config.synthetic) if config.synthetic else config.problem_paths,
        "sparsity_config": asdict(config.sparsity),
        "metrics": {
            "normalized_l1": report.normalized_l1,
            "cosine_similarity": report.cosine_similarity,
            "sparsity": report.sparsity,
            "flops_full": report.flops_full,
            "flops_sparse": report.flops_sparse,
            "flops_overhead": report.flops_overhead,
            "gapr_agreement": report.gapr_agreement,
        },
        "checks_passed": report.checks_passed,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def run_experiment(config: ExperimentConfig) -> dict:
    """Run the configured variants, write one JSON report per variant plus a
    combined CSV and a timing sidecar. Nothing is written until every variant
    has finished, so failures leave no partial report files."""
    problem = load_problem(config)
    reports = run_variants(problem, config.sparsity, config.variants,
                           compute_gapr=config.compute_gapr_agreement)
    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = [_report_row(config.sparsity.top_k_fraction, reports[v])
                for v in config.variants]
        for variant in config.variants:
            _atomic_write_text(out / f"report_{variant}.json",
                               _report_json(config, reports[variant]))
        _atomic_write_text(out / "experiment.csv", _rows_to_csv(rows))
        timings = {v: reports[v].wall_time_ms for v in config.variants}
        _atomic_write_text(out / "timings.json", json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return reports


def _rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def sweep_sparsity(config: ExperimentConfig, top_k_fractions: list[float]) -> str:
    """Run the variant set at each retention fraction (descending, so the
    sparsity column is monotonically increasing) and return the CSV text.
    Writes ``sweep.csv`` when the config has an output directory."""
    if not top_k_fractions:
        raise ConfigError("top_k_fractions must be non-empty")
    for fraction in top_k_fractions:
        if not 0.0 < fraction <= 1.0:
            raise ConfigError(f"top_k_fraction must be in (0, 1], got {fraction}")
    problem = load_problem(config)
    rows = []
    timings = {}
    for fraction in sorted(set(top_k_fractions), reverse=True):
        sparsity = SparsityConfig(
            top_k_fraction=fraction,
            weight_threshold=config.sparsity.weight_threshold,
            adjacency_radius=config.sparsity.adjacency_radius,
            force_text_blocks=config.sparsity.force_text_blocks)
        reports = run_variants(problem, sparsity, config.variants,
                               compute_gapr=config.compute_gapr_agreement)
        for variant in config.variants:
            rows.append(_report_row(fraction, reports[variant]))
            timings[f"{fraction}/{variant}"] = reports[variant].wall_time_ms
    text = _rows_to_csv(rows)
    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write_text(out / "sweep.csv", text)
        _atomic_write_text(out / "timings.json", json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return text


def save_problem(problem: AttentionProblem, out_dir) -> dict:
    """Write a problem's tensors as RSAT files plus a problem.json manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("q_video", "q_text", "k", "v"):
        path = out / f"{name}.rsat"
        write_rsat(path, getattr(problem, name))
        paths[name] = str(path)
    manifest = dict(paths)
    manifest["d"] = problem.d
    manifest["block"] = problem.block
    manifest["grid_dims"] = list(problem.grid_dims) if problem.grid_dims else None
    _atomic_write_text(out / "problem.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
