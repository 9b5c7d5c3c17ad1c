"""Two-stage training with hard freeze guarantees.

Stage 1 trains the visual side (encoder, projectors, prompts) against an
untouched language model; stage 2 resumes from a stage-1 state, freezes the
encoder and trains the projectors plus the attention adapters. After every
run each frozen parameter is compared bitwise against its pre-training
snapshot.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import torch

from .errors import MissingCheckpoint, PlanViolation
from .model import PARAMETER_GROUPS, PreparedSample, ToyVlm, parameter_groups

logger = logging.getLogger(__name__)

_ALL_GROUPS = frozenset(PARAMETER_GROUPS)
_STAGE1_TRAINABLE = frozenset({"encoder", "projectors", "prompts"})


@dataclasses.dataclass(frozen=True)
class StagePlan:
    """Which parameter groups an optimizer stage may touch."""

    stage: int
    trainable: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "trainable", frozenset(self.trainable))
        unknown = self.trainable - _ALL_GROUPS
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}")
        if self.stage == 1:
            if self.trainable != _STAGE1_TRAINABLE:
                raise ValueError("stage 1 trains exactly encoder, projectors, prompts")
        elif self.stage == 2:
            if "encoder" in self.trainable:
                raise ValueError("stage 2 must freeze the encoder")
            if not {"projectors", "lm_adapters"} <= self.trainable:
                raise ValueError("stage 2 must train projectors and lm_adapters")
        else:
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")

    @property
    def frozen(self) -> frozenset[str]:
        return _ALL_GROUPS - self.trainable


def stage1_plan() -> StagePlan:
    return StagePlan(stage=1, trainable=_STAGE1_TRAINABLE)


def stage2_plan() -> StagePlan:
    # prompts stay trainable alongside the projectors and adapters
    return StagePlan(stage=2, trainable=frozenset({"projectors", "prompts", "lm_adapters"}))


@dataclasses.dataclass
class TrainReport:
    stage: int
    steps: int
    losses: list[float]
    max_delta: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "steps": self.steps,
            "losses": self.losses,
            "max_delta": self.max_delta,
        }


def _verify_frozen(
    groups: dict[str, list],
    plan: StagePlan,
    snapshot: dict[str, torch.Tensor],
) -> None:
    for group_name in sorted(plan.frozen):
        for param_name, param in groups[group_name]:
            if not torch.equal(param.detach(), snapshot[param_name]):
                raise PlanViolation(
                    f"frozen parameter {param_name} changed during stage {plan.stage}"
                )


def train_stage(
    model: ToyVlm,
    plan: StagePlan,
    batches: list[list[PreparedSample]],
    *,
    steps: int,
    seed: int,
    lr: float = 1e-2,
    init_state: dict | None = None,
) -> tuple[dict, TrainReport]:
    """Run `steps` optimizer steps, cycling over `batches` in order.

    Returns a detached state-dict copy plus a report with the per-step
    losses and the max absolute change per parameter group. Any drift in a
    frozen group raises PlanViolation.
    """
    if plan.stage == 2 and init_state is None:
        raise MissingCheckpoint("stage 2 starts from a stage-1 checkpoint")
    if not batches or any(not b for b in batches):
        raise ValueError("batches must be non-empty")
    if steps < 1:
        raise ValueError("steps must be positive")
    if init_state is not None:
        model.load_state_dict(init_state)
    torch.manual_seed(seed)
    groups = parameter_groups(model)
    snapshot = {
        name: param.detach().clone()
        for members in groups.values()
        for name, param in members
    }
    for group_name, members in groups.items():
        flag = group_name in plan.trainable
        for _, param in members:
            param.requires_grad_(flag)
    trainable = [p for g in sorted(plan.trainable) for _, p in groups[g]]
    optimizer = torch.optim.Adam(trainable, lr=lr)
    losses: list[float] = []
    for step in range(steps):
        batch = batches[step % len(batches)]
        optimizer.zero_grad(set_to_none=True)
        results = [model.sample_loss(s) for s in batch]
        live = [r.loss for r in results if not r.degenerate]
        if not live:
            # a batch of empty-answer samples carries no gradient
            losses.append(0.0)
            continue
        loss = torch.stack(live).mean()
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
    _verify_frozen(groups, plan, snapshot)
    max_delta: dict[str, float] = {}
    for group_name, members in groups.items():
        worst = 0.0
        for param_name, param in members:
            delta = float((param.detach() - snapshot[param_name]).abs().max())
            worst = max(worst, delta)
        max_delta[group_name] = worst
    for members in groups.values():
        for _, param in members:
            param.requires_grad_(True)
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    report = TrainReport(stage=plan.stage, steps=steps, losses=losses, max_delta=max_delta)
    logger.info("stage %d: %d steps, final loss %.4f", plan.stage, steps,
                losses[-1] if losses else float("nan"))
    return state, report


def save_checkpoint(path: str | Path, state: dict) -> None:
    torch.save(state, path)


def load_checkpoint(path: str | Path) -> dict:
    return torch.load(path, weights_only=True)


def save_report(path: str | Path, report: TrainReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
