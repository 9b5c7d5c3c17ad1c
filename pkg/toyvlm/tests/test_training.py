import copy

import pytest
import torch

from toyvlm.errors import MissingCheckpoint, PlanViolation
from toyvlm.gradcheck import grad_check
from toyvlm.model import parameter_groups
from toyvlm.training import (
    StagePlan,
    _verify_frozen,
    load_checkpoint,
    save_checkpoint,
    save_report,
    stage1_plan,
    stage2_plan,
    train_stage,
)

from conftest import build_model, make_sample


def make_batches(cfg, count=3):
    return [[make_sample(cfg, seed=10 + i), make_sample(cfg, seed=50 + i, with_rationale=True)]
            for i in range(count)]


class TestStagePlan:
    def test_stage1_default(self):
        plan = stage1_plan()
        assert plan.trainable == {"encoder", "projectors", "prompts"}
        assert "lm_base" in plan.frozen and "lm_adapters" in plan.frozen

    def test_stage2_default(self):
        plan = stage2_plan()
        assert "encoder" in plan.frozen
        assert {"projectors", "lm_adapters"} <= plan.trainable

    def test_stage1_rejects_other_sets(self):
        with pytest.raises(ValueError):
            StagePlan(stage=1, trainable=frozenset({"encoder"}))
        with pytest.raises(ValueError):
            StagePlan(stage=1, trainable=frozenset({"encoder", "projectors", "prompts", "lm_base"}))

    def test_stage2_rejects_trainable_encoder(self):
        with pytest.raises(ValueError):
            StagePlan(stage=2, trainable=frozenset({"encoder", "projectors", "lm_adapters"}))

    def test_stage2_requires_projectors_and_adapters(self):
        with pytest.raises(ValueError):
            StagePlan(stage=2, trainable=frozenset({"projectors"}))

    def test_unknown_group_and_stage(self):
        with pytest.raises(ValueError):
            StagePlan(stage=1, trainable=frozenset({"frobnicator"}))
        with pytest.raises(ValueError):
            StagePlan(stage=3, trainable=frozenset({"projectors", "lm_adapters"}))


class TestTrainStage:
    def test_stage1_moves_visual_side_only(self, tiny_cfg):
        model = build_model(tiny_cfg, seed=0)
        _, report = train_stage(model, stage1_plan(), make_batches(tiny_cfg),
                                steps=3, seed=1)
        assert report.max_delta["lm_base"] == 0.0
        assert report.max_delta["lm_adapters"] == 0.0
        for key in ("encoder", "projectors", "prompts"):
            assert report.max_delta[key] > 0.0
        assert len(report.losses) == 3

    def test_stage2_requires_checkpoint(self, tiny_cfg):
        model = build_model(tiny_cfg)
        with pytest.raises(MissingCheckpoint):
            train_stage(model, stage2_plan(), make_batches(tiny_cfg), steps=1, seed=0)

    def test_stage2_freezes_encoder_trains_adapters(self, tiny_cfg):
        model = build_model(tiny_cfg, seed=0)
        state1, _ = train_stage(model, stage1_plan(), make_batches(tiny_cfg),
                                steps=2, seed=1)
        _, report = train_stage(model, stage2_plan(), make_batches(tiny_cfg),
                                steps=2, seed=2, init_state=state1)
        assert report.max_delta["encoder"] == 0.0
        assert report.max_delta["lm_base"] == 0.0
        assert report.max_delta["lm_adapters"] > 0.0
        assert report.max_delta["projectors"] > 0.0

    def test_zero_learning_rate_changes_nothing(self, tiny_cfg):
        model = build_model(tiny_cfg, seed=0)
        _, report = train_stage(model, stage1_plan(), make_batches(tiny_cfg),
                                steps=2, seed=1, lr=0.0)
        assert all(v == 0.0 for v in report.max_delta.values())

    def test_fixed_seed_fixed_trajectory(self, tiny_cfg):
        losses = []
        for _ in range(2):
            model = build_model(tiny_cfg, seed=7)
            _, report = train_stage(model, stage1_plan(), make_batches(tiny_cfg),
                                    steps=4, seed=3)
            losses.append(report.losses)
        assert losses[0] == losses[1]

    def test_requires_batches_and_steps(self, tiny_cfg):
        model = build_model(tiny_cfg)
        with pytest.raises(ValueError):
            train_stage(model, stage1_plan(), [], steps=1, seed=0)
        with pytest.raises(ValueError):
            train_stage(model, stage1_plan(), make_batches(tiny_cfg), steps=0, seed=0)

    def test_frozen_drift_raises(self, tiny_cfg):
        model = build_model(tiny_cfg)
        plan = stage1_plan()
        groups = parameter_groups(model)
        snapshot = {name: p.detach().clone()
                    for members in groups.values() for name, p in members}
        _verify_frozen(groups, plan, snapshot)
        with torch.no_grad():
            groups["lm_base"][0][1].add_(1e-7)
        with pytest.raises(PlanViolation):
            _verify_frozen(groups, plan, snapshot)

    def test_degenerate_batch_is_skipped(self, tiny_cfg):
        model = build_model(tiny_cfg)
        s = make_sample(tiny_cfg)
        s.answer_ids = []
        s.rationale_ids = None
        state_before = {k: v.clone() for k, v in model.state_dict().items()}
        _, report = train_stage(model, stage1_plan(), [[s]], steps=2, seed=0)
        assert report.losses == [0.0, 0.0]
        for k, v in model.state_dict().items():
            assert torch.equal(v, state_before[k])


class TestCheckpoints:
    def test_round_trip(self, tiny_cfg, tmp_path):
        model = build_model(tiny_cfg, seed=0)
        state, report = train_stage(model, stage1_plan(), make_batches(tiny_cfg),
                                    steps=1, seed=1)
        path = tmp_path / "stage1.pt"
        save_checkpoint(path, state)
        loaded = load_checkpoint(path)
        assert sorted(loaded) == sorted(state)
        for key in state:
            assert torch.equal(loaded[key], state[key])
        report_path = tmp_path / "report.json"
        save_report(report_path, report)
        import json
        data = json.loads(report_path.read_text())
        assert data["stage"] == 1
        assert data["max_delta"]["lm_base"] == 0.0


class TestAdapters:
    def test_zero_init_adapters_match_base_forward(self, tiny_cfg):
        model = build_model(tiny_cfg, seed=0)
        stripped = copy.deepcopy(model)
        with torch.no_grad():
            for name, p in stripped.named_parameters():
                if name.endswith(".lora_a"):
                    p.zero_()
        s = make_sample(tiny_cfg)
        a = model.sample_loss(s)
        b = stripped.sample_loss(s)
        assert torch.equal(a.logits, b.logits)

    def test_adapter_gradient_is_alive_at_init(self, tiny_cfg):
        model = build_model(tiny_cfg, seed=0)
        model.zero_grad(set_to_none=True)
        model.sample_loss(make_sample(tiny_cfg)).loss.backward()
        groups = parameter_groups(model)
        b_grads = [float(p.grad.abs().max()) for n, p in groups["lm_adapters"]
                   if n.endswith(".lora_b")]
        a_grads = [float(p.grad.abs().max()) for n, p in groups["lm_adapters"]
                   if n.endswith(".lora_a")]
        assert max(b_grads) > 0.0
        # with the up-projection still zero, nothing flows back to the down-projection
        assert max(a_grads) == 0.0


class TestGradCheckGuards:
    def test_rejects_large_configs(self, small_cfg):
        model = build_model(small_cfg)
        with pytest.raises(ValueError, match="tiny"):
            grad_check(model, make_sample(small_cfg))

    def test_rejects_bad_epsilon(self, tiny_cfg):
        model = build_model(tiny_cfg)
        with pytest.raises(ValueError):
            grad_check(model, make_sample(tiny_cfg), epsilon=0.0)
