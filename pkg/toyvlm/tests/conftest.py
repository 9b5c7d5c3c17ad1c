import numpy as np
import pytest
import torch

from toyvlm.grouping import group_points
from toyvlm.model import ModelConfig, PreparedSample, ToyVlm


def make_points(seed: int, n: int = 40) -> np.ndarray:
    """Random (n, 6) rows: xyz plus a unit-norm non-negative color triple."""
    rng = np.random.default_rng(seed)
    xyz = rng.standard_normal((n, 3))
    color = np.abs(rng.standard_normal((n, 3))) + 1e-3
    color /= np.linalg.norm(color, axis=1, keepdims=True)
    return np.concatenate([xyz, color], axis=1).astype(np.float32)


def build_model(cfg: ModelConfig, seed: int = 0) -> ToyVlm:
    torch.manual_seed(seed)
    return ToyVlm(cfg)


def make_sample(cfg: ModelConfig, *, seed: int = 1, with_rationale: bool = False,
                sample_id: str = "case-0:1:0") -> PreparedSample:
    """Handmade token ids inside a vocab of 14; grouped random points."""
    pts = make_points(seed)
    grouped = group_points(pts, cfg.groups, cfg.neighbors, seed=seed)
    return PreparedSample(
        sample_id=sample_id,
        centers=torch.from_numpy(grouped.centers),
        members=torch.from_numpy(grouped.members),
        question_ids=[2, 3, 4, 5],
        answer_ids=[6, 7] + ([] if with_rationale else [0]),
        rationale_ids=[8, 9, 10, 0] if with_rationale else None,
    )


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(
        vocab_size=14, d_enc=6, d_model=8, n_heads=2, n_layers=1,
        max_seq_len=96, groups=3, neighbors=4,
        prompt_counts=(2, 2, 2), prompt_budget=6,
    )


@pytest.fixture
def small_cfg() -> ModelConfig:
    return ModelConfig(
        vocab_size=24, d_enc=12, d_model=16, n_heads=2, n_layers=2,
        max_seq_len=160, groups=4, neighbors=5,
        prompt_counts=(3, 3, 2), prompt_budget=8,
    )
