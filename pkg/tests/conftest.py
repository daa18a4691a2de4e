import json
from pathlib import Path

import numpy as np
import pytest

from rectattn.core import AttentionProblem
from rectattn.rsat import read_rsat

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def golden_scalars() -> dict:
    return json.loads((FIXTURES / "scalars.json").read_text())


def load_fixture(name: str) -> np.ndarray:
    return read_rsat(FIXTURES / name)


def random_problem(seed: int, t_v: int = 32, t_t: int = 6, d: int = 8, block: int = 4,
                   precision: str = "double", grid_dims=None) -> AttentionProblem:
    """Plain Gaussian problem, independent of the synthetic generator."""
    rng = np.random.default_rng(seed)
    dtype = np.float32 if precision == "single" else np.float64
    return AttentionProblem(
        q_video=rng.standard_normal((t_v, d)).astype(dtype),
        q_text=rng.standard_normal((t_t, d)).astype(dtype),
        k=rng.standard_normal((t_v + t_t, d)).astype(dtype),
        v=rng.standard_normal((t_v + t_t, d)).astype(dtype),
        d=d, block=block, grid_dims=grid_dims)


def homogeneous_problem(seed: int, t_v: int = 32, t_t: int = 4, d: int = 8,
                        block: int = 4, precision: str = "double") -> AttentionProblem:
    """Every Q and K block repeats one row, so pooling is lossless."""
    rng = np.random.default_rng(seed)
    dtype = np.float32 if precision == "single" else np.float64
    n = t_v // block
    n_text = -(-t_t // block)

    def tile(base_rows, lens):
        return np.concatenate([np.tile(base_rows[i], (lens[i], 1)) for i in range(len(lens))])

    text_lens = [block] * (n_text - 1) + [t_t - (n_text - 1) * block] if n_text else []
    q_video = tile(rng.standard_normal((n, d)), [block] * n)
    k = tile(rng.standard_normal((n + n_text, d)), [block] * n + text_lens)
    return AttentionProblem(
        q_video=q_video.astype(dtype),
        q_text=tile(rng.standard_normal((max(n_text, 1), d)), text_lens or [0])[:t_t].astype(dtype)
        if t_t else np.empty((0, d), dtype=dtype),
        k=k.astype(dtype),
        v=rng.standard_normal((t_v + t_t, d)).astype(dtype),
        d=d, block=block)
