"""Point-group encoder, prompt fusion, and a tiny causal language model.

The visual side turns grouped 6-channel rows into three feature granularities
(per-group absolute position embeddings, per-group local features, one global
descriptor), projects each through its own linear map, and interleaves the
results with three blocks of learnable prompt tokens in a fixed order. The
text side is a small pre-norm transformer decoder whose attention query and
value projections carry rank-limited additive adapters, zero-initialized on
the up-projection so a fresh model computes exactly its base forward.

Activations are tanh/GELU throughout; keeping everything smooth matters for
the finite-difference gradient verification.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionMismatch
from .grouping import group_points
from .vqadata import VqaRow, WordVocab, answer_text, rationale_text

PARAMETER_GROUPS = ("encoder", "projectors", "prompts", "lm_base", "lm_adapters")


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_enc: int = 32
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    max_seq_len: int = 192
    groups: int = 8
    neighbors: int = 8
    prompt_counts: tuple[int, int, int] = (11, 11, 10)
    prompt_budget: int = 32
    lora_rank: int = 4
    lora_alpha: float = 8.0

    def __post_init__(self) -> None:
        if self.vocab_size < 3:
            raise ValueError("vocab_size must cover <eos>, <unk> and at least one word")
        if self.d_enc < 1 or self.d_model < 1:
            raise ValueError("feature dimensions must be positive")
        if self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ValueError("n_heads must divide d_model")
        if self.n_layers < 1:
            raise ValueError("need at least one decoder layer")
        if self.groups < 1 or self.neighbors < 1:
            raise ValueError("groups and neighbors must be positive")
        if len(self.prompt_counts) != 3 or any(c < 0 for c in self.prompt_counts):
            raise ValueError("prompt_counts must be three non-negative ints")
        if sum(self.prompt_counts) != self.prompt_budget:
            raise ValueError(
                f"prompt_counts {self.prompt_counts} must sum to the budget {self.prompt_budget}"
            )
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be positive")


@dataclasses.dataclass(frozen=True)
class FusionLayout:
    """Block bookkeeping for one fused visual sequence."""

    prompt_counts: tuple[int, int, int]
    groups: int

    @property
    def total_visual_tokens(self) -> int:
        p_ape, p_local, p_global = self.prompt_counts
        return p_ape + self.groups + p_local + self.groups + p_global + 1

    def blocks(self) -> list[tuple[str, int, int]]:
        """(name, start, stop) per block, in fusion order."""
        p_ape, p_local, p_global = self.prompt_counts
        sizes = [
            ("prompt_ape", p_ape),
            ("ape", self.groups),
            ("prompt_local", p_local),
            ("local", self.groups),
            ("prompt_global", p_global),
            ("global", 1),
        ]
        out = []
        at = 0
        for name, size in sizes:
            out.append((name, at, at + size))
            at += size
        return out


@dataclasses.dataclass
class EncoderFeatures:
    """Three granularities of one encoded cloud.

    Leading batch dimensions are allowed; the last two are (rows, d_enc)
    with one row per group for f_ape/f_local and exactly one for f_global.
    """

    f_ape: torch.Tensor
    f_local: torch.Tensor
    f_global: torch.Tensor

    def __post_init__(self) -> None:
        if self.f_ape.shape != self.f_local.shape:
            raise ValueError("f_ape and f_local must share a shape")
        if self.f_global.shape[-2] != 1:
            raise ValueError("f_global must hold exactly one row")
        if self.f_ape.shape[-1] != self.f_global.shape[-1]:
            raise ValueError("granularities disagree on feature width")
        for t in (self.f_ape, self.f_local, self.f_global):
            if not torch.isfinite(t).all():
                raise ValueError("non-finite encoder feature")

    @property
    def group_count(self) -> int:
        return self.f_ape.shape[-2]


class PointGroupEncoder(nn.Module):
    """Permutation-invariant group encoder.

    f_ape sees only the group-center xyz. f_local mean-pools a per-member
    network over member rows written relative to their center (xyz offsets,
    color channels kept as-is), so reordering members leaves it unchanged
    and a rigid translation moves only f_ape. f_global mean-pools f_local
    over groups.
    """

    def __init__(self, d_enc: int):
        super().__init__()
        self.ape_map = nn.Sequential(
            nn.Linear(3, d_enc), nn.Tanh(), nn.Linear(d_enc, d_enc)
        )
        self.member_map = nn.Sequential(
            nn.Linear(6, d_enc), nn.Tanh(), nn.Linear(d_enc, d_enc)
        )

    def forward(self, centers: torch.Tensor, members: torch.Tensor) -> EncoderFeatures:
        offsets = members[..., :3] - centers[..., None, :3]
        rel = torch.cat([offsets, members[..., 3:]], dim=-1)
        f_ape = self.ape_map(centers[..., :3])
        f_local = self.member_map(rel).mean(dim=-2)
        f_global = f_local.mean(dim=-2, keepdim=True)
        return EncoderFeatures(f_ape=f_ape, f_local=f_local, f_global=f_global)


class AdapterLinear(nn.Module):
    """Linear layer with a rank-limited additive adapter.

    The up-projection starts at zero, so until the adapter trains the layer
    computes exactly the base affine map.
    """

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_out, d_in))
        self.bias = nn.Parameter(torch.zeros(d_out))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        self.lora_a = nn.Parameter(torch.randn(rank, d_in) * 0.02)
        self.lora_b = nn.Parameter(torch.zeros(d_out, rank))
        self.scaling = alpha / rank

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        base = F.linear(x, self.weight, self.bias)
        return base + F.linear(F.linear(x, self.lora_a), self.lora_b) * self.scaling


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.d_model // cfg.n_heads
        self.q_proj = AdapterLinear(cfg.d_model, cfg.d_model, cfg.lora_rank, cfg.lora_alpha)
        self.k_proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.v_proj = AdapterLinear(cfg.d_model, cfg.d_model, cfg.lora_rank, cfg.lora_alpha)
        self.o_proj = nn.Linear(cfg.d_model, cfg.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[0]
        def split(h: torch.Tensor) -> torch.Tensor:
            return h.view(t, self.n_heads, self.head_dim).transpose(0, 1)
        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        att = att.masked_fill(causal, float("-inf"))
        att = torch.softmax(att, dim=-1)
        out = (att @ v).transpose(0, 1).reshape(t, -1)
        return self.o_proj(out)


class DecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, 4 * cfg.d_model),
            nn.GELU(),
            nn.Linear(4 * cfg.d_model, cfg.d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.mlp(self.ln2(x))
        return x


class TinyCausalLM(nn.Module):
    """Word-level causal decoder operating on pre-embedded sequences."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.max_seq_len = cfg.max_seq_len
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Parameter(torch.randn(cfg.max_seq_len, cfg.d_model) * 0.02)
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)

    def decode(self, h: torch.Tensor) -> torch.Tensor:
        t = h.shape[0]
        if t > self.max_seq_len:
            raise ValueError(f"sequence length {t} exceeds the limit {self.max_seq_len}")
        h = h + self.pos_emb[:t]
        for block in self.blocks:
            h = block(h)
        return self.head(self.ln_f(h))


@dataclasses.dataclass
class LossResult:
    """Loss plus the supervision mask over the full fused sequence."""

    loss: torch.Tensor
    mask: torch.Tensor
    degenerate: bool
    logits: torch.Tensor


@dataclasses.dataclass
class PreparedSample:
    """One sample ready for the model: grouped rows plus token id spans."""

    sample_id: str
    centers: torch.Tensor
    members: torch.Tensor
    question_ids: list[int]
    answer_ids: list[int]
    rationale_ids: list[int] | None = None


class ToyVlm(nn.Module):
    """Encoder, projectors, prompts and decoder wired into one trainable unit."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = PointGroupEncoder(cfg.d_enc)
        self.projectors = nn.ModuleDict({
            "ape": nn.Linear(cfg.d_enc, cfg.d_model),
            "local": nn.Linear(cfg.d_enc, cfg.d_model),
            "global": nn.Linear(cfg.d_enc, cfg.d_model),
        })
        p_ape, p_local, p_global = cfg.prompt_counts
        self.prompts = nn.ParameterDict({
            "ape": nn.Parameter(torch.randn(p_ape, cfg.d_model) * 0.02),
            "local": nn.Parameter(torch.randn(p_local, cfg.d_model) * 0.02),
            "global": nn.Parameter(torch.randn(p_global, cfg.d_model) * 0.02),
        })
        self.lm = TinyCausalLM(cfg)

    def fuse(self, features: EncoderFeatures) -> tuple[torch.Tensor, FusionLayout]:
        """Interleave the prompt blocks with projected features.

        The order is fixed: ape prompts, projected f_ape, local prompts,
        projected f_local, global prompts, projected f_global.
        """
        if features.f_ape.dim() != 2:
            raise DimensionMismatch("fuse expects unbatched (G, d_enc) features")
        if features.f_ape.shape[-1] != self.cfg.d_enc:
            raise DimensionMismatch(
                f"features are {features.f_ape.shape[-1]}-wide, projectors expect {self.cfg.d_enc}"
            )
        layout = FusionLayout(self.cfg.prompt_counts, groups=features.group_count)
        rows = [
            self.prompts["ape"],
            self.projectors["ape"](features.f_ape),
            self.prompts["local"],
            self.projectors["local"](features.f_local),
            self.prompts["global"],
            self.projectors["global"](features.f_global),
        ]
        fused = torch.cat(rows, dim=0)
        return fused, layout

    def forward_loss(
        self,
        centers: torch.Tensor,
        members: torch.Tensor,
        question_ids: list[int],
        answer_ids: list[int],
        rationale_ids: list[int] | None = None,
    ) -> LossResult:
        """Cross-entropy over the answer span (plus the rationale span when
        present). Visual and question positions never enter the loss; the
        returned mask marks exactly the supervised positions.
        """
        features = self.encoder(centers, members)
        visual, _ = self.fuse(features)
        t_visual = visual.shape[0]
        rationale_ids = list(rationale_ids) if rationale_ids else []
        text = list(question_ids) + list(answer_ids) + rationale_ids
        total = t_visual + len(text)
        mask = torch.zeros(total, dtype=torch.bool)
        a_start = t_visual + len(question_ids)
        a_stop = a_start + len(answer_ids)
        mask[a_start:a_stop] = True
        if rationale_ids:
            mask[a_stop:a_stop + len(rationale_ids)] = True
        if text:
            ids = torch.tensor(text, dtype=torch.long)
            h = torch.cat([visual, self.lm.tok_emb(ids)], dim=0)
        else:
            ids = torch.empty(0, dtype=torch.long)
            h = visual
        logits = self.lm.decode(h)
        positions = mask.nonzero(as_tuple=False).squeeze(1)
        if positions.numel() == 0:
            zero = torch.zeros((), dtype=visual.dtype)
            return LossResult(loss=zero, mask=mask, degenerate=True, logits=logits)
        targets = ids[positions - t_visual]
        loss = F.cross_entropy(logits[positions - 1], targets)
        return LossResult(loss=loss, mask=mask, degenerate=False, logits=logits)

    def sample_loss(self, sample: PreparedSample) -> LossResult:
        return self.forward_loss(
            sample.centers,
            sample.members,
            sample.question_ids,
            sample.answer_ids,
            sample.rationale_ids,
        )

    @torch.no_grad()
    def greedy_generate(
        self,
        centers: torch.Tensor,
        members: torch.Tensor,
        question_ids: list[int],
        *,
        max_new: int = 8,
        eos_id: int | None = None,
    ) -> list[int]:
        """Greedy continuation after the question; stops on eos_id."""
        features = self.encoder(centers, members)
        visual, _ = self.fuse(features)
        ids = list(question_ids)
        out: list[int] = []
        for _ in range(max_new):
            if ids:
                tok = torch.tensor(ids, dtype=torch.long)
                h = torch.cat([visual, self.lm.tok_emb(tok)], dim=0)
            else:
                h = visual
            logits = self.lm.decode(h)
            nxt = int(torch.argmax(logits[-1]))
            if eos_id is not None and nxt == eos_id:
                break
            out.append(nxt)
            ids.append(nxt)
        return out


def prepare_sample(
    row: VqaRow,
    points: np.ndarray,
    vocab: WordVocab,
    cfg: ModelConfig,
    *,
    group_seed: int,
) -> PreparedSample:
    """Group one cloud and tokenize one dataset row.

    The answer span is the serialized answer; a final <eos> closes whichever
    span comes last, so label-only samples carry it on the answer and
    rationale samples on the rationale.
    """
    grouped = group_points(points, cfg.groups, cfg.neighbors, seed=group_seed)
    question_ids = vocab.encode(row.question)
    if row.rationale:
        answer_ids = vocab.encode(answer_text(row.answer_label))
        rationale_ids = vocab.encode(rationale_text(row.rationale)) + [vocab.eos_id]
    else:
        answer_ids = vocab.encode(answer_text(row.answer_label)) + [vocab.eos_id]
        rationale_ids = None
    return PreparedSample(
        sample_id=row.sample_id,
        centers=torch.from_numpy(grouped.centers),
        members=torch.from_numpy(grouped.members),
        question_ids=question_ids,
        answer_ids=answer_ids,
        rationale_ids=rationale_ids,
    )


def parameter_groups(model: nn.Module) -> dict[str, list[tuple[str, nn.Parameter]]]:
    """Partition named parameters into the five freeze-plan groups.

    Raises if any parameter fits no group, so a renamed module cannot
    silently escape the freeze checks.
    """
    out: dict[str, list[tuple[str, nn.Parameter]]] = {g: [] for g in PARAMETER_GROUPS}
    for name, param in model.named_parameters():
        if name.startswith("encoder."):
            key = "encoder"
        elif name.startswith("projectors."):
            key = "projectors"
        elif name.startswith("prompts."):
            key = "prompts"
        elif name.startswith("lm.") and (name.endswith(".lora_a") or name.endswith(".lora_b")):
            key = "lm_adapters"
        elif name.startswith("lm."):
            key = "lm_base"
        else:
            raise ValueError(f"parameter {name} fits no freeze group")
        out[key].append((name, param))
    return out
