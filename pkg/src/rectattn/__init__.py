"""Rectified block-sparse attention: pooled implicit full attention, gain-aware
compensation, oracle verification, and a sparsity/accuracy benchmark harness."""

from .core import (AttentionProblem, BlockGrid, PooledSet, block_pool,
                   full_attention_oracle, masked_attention_oracle, partition,
                   pool_problem, reorder_morton)
from .errors import (BlockSizeError, ConfigError, DegenerateRowError, EmptyRowError,
                     IoError, MissingGridError, RectAttnError, SchemaError,
                     ShapeError, ZeroReferenceError, ZeroVectorError)
from .harness import (ExperimentConfig, SyntheticSpec, gen_synthetic,
                      run_experiment, sweep_sparsity)
from .ipar import ImplicitAttention, implicit_full_attention, mixed_pooled_scores, reallocate
from .kernel import AttentionOutput, block_sparse_attention, text_full_attention
from .masks import (CompensationMask, GainError, SparseMask, SparsityConfig,
                    attention_gain, build_sparse_mask, compensation_mask,
                    gain_error, pooling_error)
from .metrics import (AlignmentReport, DenominatorReport, cosine_similarity,
                      denominator_equivalence_report, gapr_condition_agreement,
                      normalized_l1, sparsity_and_flops)
from .plots import render_plots
from .rectify import (PipelineResult, RectificationFactors, VARIANTS,
                      apply_rectification, rectification_factors,
                      rectified_attention_pipeline)
from .rsat import read_rsat, write_rsat

__version__ = "0.1.0"
