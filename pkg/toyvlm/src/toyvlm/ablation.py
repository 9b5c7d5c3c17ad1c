"""Synthetic orientation ablation: do the three color channels carry class
signal that a constant white fill does not?

Two classes share one xyz distribution (uniform in the unit ball) and differ
only in surface-normal statistics: class 0 normals cluster around +z, class 1
normals are isotropic. The color channels hold the componentwise absolute
value of the unit normal, so overwriting them with a constant removes the
only separable cue. Each trial trains the same classifier twice, from the
same init, on the two channel variants of the same geometry.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .grouping import group_points
from .model import PointGroupEncoder

logger = logging.getLogger(__name__)

WHITE = float(1.0 / np.sqrt(3.0))


def make_orientation_clouds(
    n_samples: int,
    n_points: int,
    seed: int,
    *,
    white: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced two-class clouds, float32 (S, N, 6); labels (S,) int64.

    The same seed yields identical geometry for both channel variants, so a
    white run differs from a color run in the color columns alone.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples, dtype=np.int64) % 2
    xyz = rng.standard_normal((n_samples, n_points, 3))
    xyz /= np.maximum(np.linalg.norm(xyz, axis=-1, keepdims=True), 1e-9)
    xyz *= rng.random((n_samples, n_points, 1)) ** (1.0 / 3.0)
    normals = rng.standard_normal((n_samples, n_points, 3))
    tight = normals * np.array([0.12, 0.12, 1.0]) + np.array([0.0, 0.0, 2.0])
    normals = np.where((labels == 0)[:, None, None], tight, normals)
    norm = np.maximum(np.linalg.norm(normals, axis=-1, keepdims=True), 1e-9)
    color = np.abs(normals) / norm
    if white:
        color = np.full_like(color, WHITE)
    clouds = np.concatenate([xyz, color], axis=-1).astype(np.float32)
    return clouds, labels


def _grouped_tensors(
    clouds: np.ndarray, groups: int, neighbors: int
) -> tuple[torch.Tensor, torch.Tensor]:
    centers = []
    members = []
    for i in range(clouds.shape[0]):
        g = group_points(clouds[i], groups, neighbors, seed=i)
        centers.append(g.centers)
        members.append(g.members)
    return (
        torch.from_numpy(np.stack(centers)),
        torch.from_numpy(np.stack(members)),
    )


class OrientationClassifier(nn.Module):
    """Group encoder plus a linear head on the global descriptor."""

    def __init__(self, d_enc: int = 32):
        super().__init__()
        self.encoder = PointGroupEncoder(d_enc)
        self.head = nn.Linear(d_enc, 2)

    def forward(self, centers: torch.Tensor, members: torch.Tensor) -> torch.Tensor:
        features = self.encoder(centers, members)
        return self.head(features.f_global.squeeze(-2))


@dataclasses.dataclass(frozen=True)
class TrialResult:
    seed: int
    accuracy_color: float
    accuracy_white: float


def _fit_and_score(
    seed: int,
    train: tuple[torch.Tensor, torch.Tensor],
    val: tuple[torch.Tensor, torch.Tensor],
    train_labels: torch.Tensor,
    val_labels: torch.Tensor,
    *,
    steps: int,
    lr: float,
    d_enc: int,
) -> float:
    torch.manual_seed(seed)
    model = OrientationClassifier(d_enc)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(steps):
        optimizer.zero_grad(set_to_none=True)
        logits = model(*train)
        loss = F.cross_entropy(logits, train_labels)
        loss.backward()
        optimizer.step()
    with torch.no_grad():
        predicted = model(*val).argmax(dim=-1)
    return float((predicted == val_labels).float().mean())


def run_trial(
    seed: int,
    *,
    n_train: int = 96,
    n_val: int = 96,
    n_points: int = 64,
    groups: int = 8,
    neighbors: int = 8,
    steps: int = 80,
    lr: float = 0.03,
    d_enc: int = 32,
) -> TrialResult:
    """One controlled comparison: same geometry, same init, two channel fills."""
    accuracies = {}
    for white in (False, True):
        train_clouds, train_y = make_orientation_clouds(
            n_train, n_points, 10_000 + seed, white=white
        )
        val_clouds, val_y = make_orientation_clouds(
            n_val, n_points, 20_000 + seed, white=white
        )
        train = _grouped_tensors(train_clouds, groups, neighbors)
        val = _grouped_tensors(val_clouds, groups, neighbors)
        accuracies[white] = _fit_and_score(
            seed,
            train,
            val,
            torch.from_numpy(train_y),
            torch.from_numpy(val_y),
            steps=steps,
            lr=lr,
            d_enc=d_enc,
        )
    result = TrialResult(seed=seed, accuracy_color=accuracies[False], accuracy_white=accuracies[True])
    logger.info(
        "seed %d: color %.3f vs white %.3f", seed, result.accuracy_color, result.accuracy_white
    )
    return result


def run_ablation(seeds=(0, 1, 2, 3, 4), **kwargs) -> list[TrialResult]:
    return [run_trial(seed, **kwargs) for seed in seeds]


def count_wins(results: list[TrialResult]) -> int:
    """Trials where the orientation channels strictly beat the white fill."""
    return sum(1 for r in results if r.accuracy_color > r.accuracy_white)
