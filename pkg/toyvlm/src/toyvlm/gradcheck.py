"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

import copy

import torch

from .model import PreparedSample, ToyVlm, parameter_groups

# configs small enough for the elementwise sweep to stay fast
MAX_D_ENC = 8
MAX_GROUPS = 4
MAX_VOCAB = 16


def grad_check(model: ToyVlm, sample: PreparedSample, epsilon: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients
    of the sample loss, swept elementwise over projector and prompt
    parameters.

    Runs on a float64 copy so the difference-quotient noise floor sits far
    below the tolerance this is checked against. The relative error uses
    max(|analytic|, |numeric|, 1e-2) as the denominator, which keeps
    near-zero gradient entries from inflating the ratio.
    """
    cfg = model.cfg
    if cfg.d_enc > MAX_D_ENC or cfg.groups > MAX_GROUPS or cfg.vocab_size > MAX_VOCAB:
        raise ValueError(
            f"grad_check expects a tiny config (d_enc <= {MAX_D_ENC}, "
            f"groups <= {MAX_GROUPS}, vocab <= {MAX_VOCAB})"
        )
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    probe = copy.deepcopy(model).double()
    centers = sample.centers.double()
    members = sample.members.double()

    def run() -> torch.Tensor:
        return probe.forward_loss(
            centers, members, sample.question_ids, sample.answer_ids, sample.rationale_ids
        ).loss

    probe.zero_grad(set_to_none=True)
    run().backward()
    groups = parameter_groups(probe)
    params = [p for key in ("projectors", "prompts") for _, p in groups[key]]
    worst = 0.0
    with torch.no_grad():
        for param in params:
            flat = param.view(-1)
            grad = param.grad.view(-1)
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + epsilon
                up = float(run())
                flat[i] = original - epsilon
                down = float(run())
                flat[i] = original
                numeric = (up - down) / (2.0 * epsilon)
                analytic = float(grad[i])
                scale = max(abs(analytic), abs(numeric), 1e-2)
                worst = max(worst, abs(analytic - numeric) / scale)
    return worst
