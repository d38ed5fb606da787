"""The contrastive context-aware training loop.

Per step: sample a pair batch, run both branches on both pair members,
build the CGD mask from the positive pairs, take an SGD step on
``L_cls + lambda_con * L_con`` and move the target towards the online
weights.  The target decay advances per step, the drop rate and learning
rate per epoch.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .catalog import Catalog, ProtocolSplit
from .cgd import VARIANTS, CgdMask, build_mask, decay_pd
from .evaluation import ScoreSet, score_catalog
from .model import CCLNet, ModelConfig, ModelState, build_model, tau_schedule
from .objective import classification_loss, contrastive_terms, total_loss
from .pairs import PATTERNS, BatchBuilder, epoch_length

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, epoch: int):
        super().__init__(f"non-finite loss at step {step} (epoch {epoch})")
        self.step = step
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    milestones: tuple[int, ...] = (15, 21, 26)
    gamma: float = 0.2
    lambda_con: float = 0.7
    p_d_base: float = 0.15
    tau_base: float = 0.996
    seed: int = 0
    patterns: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    pattern_weights: tuple[float, ...] | None = None
    balance_pairs: bool = False
    cgd_variant: str = "standard"
    # None: one epoch is enough pairs to cover the training rows once on average.
    steps_per_epoch: int | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        ms = list(self.milestones)
        if ms != sorted(set(ms)) or (ms and (ms[0] < 1 or ms[-1] >= self.epochs)):
            raise ValueError("milestones must be strictly increasing and inside (0, epochs)")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.cgd_variant not in VARIANTS:
            raise ValueError(f"unknown CGD variant {self.cgd_variant!r}")
        if self.lambda_con < 0:
            raise ValueError("lambda_con must be >= 0")
        if not self.patterns or any(k not in PATTERNS for k in self.patterns):
            raise ValueError(f"pattern ids must be drawn from {sorted(PATTERNS)}")
        if self.pattern_weights is not None and len(self.pattern_weights) != len(self.patterns):
            raise ValueError("one weight per pattern")


# Settings of the full-size experiments (ResNet-scale heads, batch 256).
PAPER_TRAIN = TrainConfig(batch_size=256)


def lr_at_epoch(epoch: int, base: float, milestones: Sequence[int], gamma: float) -> float:
    """Step-decayed rate, computed in decimal so 0.01 * 0.2**2 is exactly 0.0004."""
    k = sum(1 for m in milestones if epoch >= m)
    return float(Decimal(repr(base)) * Decimal(repr(gamma)) ** k)


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    l_cls: float
    l_con: float
    l_total: float
    p_d_effective: float
    tau: float
    lr: float
    top_k: tuple[int, ...]
    skipped_pairs: int


CSV_FIELDS = ("epoch", "step", "l_cls", "l_con", "l_total", "p_d_effective", "tau", "lr")


@dataclass
class TrainLog:
    steps: list[StepRecord] = field(default_factory=list)
    checkpoint: str | None = None

    def epoch_means(self, key: str) -> dict[int, float]:
        out: dict[int, list[float]] = {}
        for r in self.steps:
            out.setdefault(r.epoch, []).append(getattr(r, key))
        return {e: float(np.mean(v)) for e, v in out.items()}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for r in self.steps:
                w.writerow([r.epoch, r.step] + [repr(getattr(r, k)) for k in CSV_FIELDS[2:]])

    def write_cgd_audit(self, path: str | Path) -> None:
        lines = ["epoch,step,p_d_effective,topK"]
        lines += [f"{r.epoch},{r.step},{r.p_d_effective!r},{' '.join(map(str, r.top_k))}" for r in self.steps]
        Path(path).write_text("\n".join(lines) + "\n")


def step_losses(
    net: CCLNet,
    x1: torch.Tensor,
    x2: torch.Tensor,
    y1: torch.Tensor,
    y2: torch.Tensor,
    p_d: float,
    variant: str,
    lambda_con: float,
    strict: bool = False,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, CgdMask, int]:
    """One forward pass over a pair batch; returns (l_total, l_cls, l_con, mask, skipped)."""
    n = x1.shape[0]
    c, z = net.forward_online(torch.cat([x1, x2]))
    p = net.forward_target(torch.cat([x1, x2]))
    c1, c2, z1, z2, p1, p2 = c[:n], c[n:], z[:n], z[n:], p[:n], p[n:]
    l_cls = classification_loss(c1, c2, y1, y2)
    if lambda_con == 0:
        zero = torch.zeros((), dtype=l_cls.dtype)
        return l_cls, l_cls, zero, CgdMask(), 0
    mask = build_mask(z1.detach(), z2.detach(), p1, p2, y1, y2, p_d, variant)
    terms, ok = contrastive_terms(z1, z2, p1, p2, y1, y2, mask, strict=strict)
    skipped = int((~ok).sum())
    l_con = terms[ok].mean() if bool(ok.any()) else torch.zeros((), dtype=l_cls.dtype)
    return total_loss(l_cls, l_con, lambda_con), l_cls, l_con, mask, skipped


def train(
    catalog: Catalog,
    split: ProtocolSplit | None,
    config: TrainConfig = TrainConfig(),
    stop_after_epochs: int | None = None,
) -> tuple[ModelState, TrainLog]:
    """Train from scratch on the split's training rows (all rows if ``split`` is None).

    ``stop_after_epochs`` truncates the run without changing any schedule.
    """
    train_cat = split.apply(catalog, "train") if split is not None else catalog
    if len(train_cat) == 0:
        raise ValueError("no training rows")
    model_cfg = config.model
    if model_cfg.input_dim != train_cat.dim:
        raise ValueError(f"model input_dim {model_cfg.input_dim} != feature dim {train_cat.dim}")

    rng = np.random.default_rng(config.seed)
    builder = BatchBuilder(train_cat, config.patterns, config.pattern_weights, config.balance_pairs)
    steps_per_epoch = config.steps_per_epoch or epoch_length(len(train_cat), config.batch_size)
    total_steps = config.epochs * steps_per_epoch

    net = build_model(model_cfg, seed=config.seed)
    net.train()
    dtype = next(net.parameters()).dtype
    state = ModelState(net, 0, total_steps, config.tau_base)
    opt = torch.optim.SGD(
        net.online_parameters(),
        lr=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    features = torch.from_numpy(np.ascontiguousarray(train_cat.features)).to(dtype)
    labels = torch.from_numpy(train_cat.labels)
    variant = config.cgd_variant
    train_log = TrainLog()
    last_epoch = config.epochs if stop_after_epochs is None else min(stop_after_epochs, config.epochs)

    for epoch in range(last_epoch):
        lr = lr_at_epoch(epoch, config.learning_rate, config.milestones, config.gamma)
        for group in opt.param_groups:
            group["lr"] = lr
        p_d = 0.0 if variant == "off" else decay_pd(config.p_d_base, epoch, config.epochs)
        for _ in range(steps_per_epoch):
            batch = builder.sample(config.batch_size, rng)
            idx1 = torch.from_numpy(batch.first)
            idx2 = torch.from_numpy(batch.second)
            l_total, l_cls, l_con, mask, skipped = step_losses(
                net, features[idx1], features[idx2], labels[idx1], labels[idx2], p_d, variant, config.lambda_con
            )
            if not bool(torch.isfinite(l_total)):
                raise TrainingDivergedError(state.step, epoch)
            if skipped:
                log.info("step %d: %d pairs skipped in contrastive term (zero norm)", state.step, skipped)
            opt.zero_grad(set_to_none=True)
            l_total.backward()
            opt.step()
            tau = tau_schedule(state.step, total_steps, config.tau_base)
            net.update_target(tau)
            train_log.steps.append(
                StepRecord(
                    epoch,
                    state.step,
                    float(l_cls.detach()),
                    float(l_con.detach()),
                    float(l_total.detach()),
                    p_d,
                    tau,
                    lr,
                    mask.top_k,
                    skipped,
                )
            )
            state.step += 1
        log.debug("epoch %d: mean l_total %.5f", epoch, np.mean([r.l_total for r in train_log.steps[-steps_per_epoch:]]))
    return state, train_log


def evaluate_epoch(net: CCLNet, catalog: Catalog, subjects) -> ScoreSet:
    """Frame-level liveness scores of the given subjects; no parameter changes."""
    subjects = list(subjects)
    if not subjects:
        raise ValueError("empty subject set")
    part = catalog.select(subjects=subjects)
    return ScoreSet(score_catalog(net, part), part.labels, part.sample_ids())
