"""PAD metrics, development-set threshold rules and protocol reports.

Scores are liveness probabilities; a sample is accepted as live iff
``score >= threshold``.  Rates are percentages.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .catalog import Catalog, build_protocol_split
from .model import CCLNet

log = logging.getLogger(__name__)


class EmptyClassError(ValueError):
    """A metric needs both live and attack samples."""


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray
    sample_ids: Sequence[str] = ()

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels differ in shape")

    @property
    def live(self) -> np.ndarray:
        return self.scores[self.labels == 1]

    @property
    def attack(self) -> np.ndarray:
        return self.scores[self.labels == 0]

    def require_both(self) -> None:
        if not (self.labels == 1).any() or not (self.labels == 0).any():
            raise EmptyClassError("score set needs at least one live and one attack sample")


def error_counts(score_set: ScoreSet, theta) -> tuple[np.ndarray, np.ndarray]:
    """(attacks accepted, lives rejected) at one or many thresholds."""
    score_set.require_both()
    theta = np.asarray(theta, dtype=np.float64)
    attack = np.sort(score_set.attack)
    accepted_attacks = attack.size - np.searchsorted(attack, theta, side="left")
    rejected_lives = np.searchsorted(np.sort(score_set.live), theta, side="left")
    return accepted_attacks, rejected_lives


def error_rates(score_set: ScoreSet, theta) -> tuple[np.ndarray, np.ndarray]:
    """(APCER, BPCER) in percent at one or many thresholds."""
    accepted_attacks, rejected_lives = error_counts(score_set, theta)
    return 100.0 * accepted_attacks / score_set.attack.size, 100.0 * rejected_lives / score_set.live.size


def threshold_metrics(score_set: ScoreSet, theta: float) -> tuple[float, float, float]:
    apcer, bpcer = error_rates(score_set, theta)
    return float(apcer), float(bpcer), acer(float(apcer), float(bpcer))


def acer(apcer: float, bpcer: float) -> float:
    return (apcer + bpcer) / 2.0


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """0, the midpoints between adjacent distinct scores and a reject-all point, ascending.

    The reject-all point is 1 unless some score saturates at 1, in which case
    it is the next float above 1.
    """
    u = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (u[:-1] + u[1:]) / 2.0
    top = 1.0 if u.size == 0 or u[-1] < 1.0 else float(np.nextafter(u[-1], np.inf))
    return np.unique(np.concatenate([[0.0], mids, [top]]))


def eer_threshold(dev: ScoreSet) -> float:
    """Candidate minimising |APCER - BPCER|; ties go to the smallest."""
    cands = candidate_thresholds(dev.scores)
    apcer, bpcer = error_rates(dev, cands)
    gap = np.abs(apcer - bpcer)
    return float(cands[np.flatnonzero(gap == gap.min())[0]])


def bpcer_target_threshold(dev: ScoreSet, target: float = 0.01) -> tuple[float, bool]:
    """Largest candidate whose BPCER does not exceed ``target`` (a fraction).

    Returns ``(theta, at_boundary)``; ``at_boundary`` flags the degenerate case
    where only the accept-everything threshold 0 qualifies.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    cands = candidate_thresholds(dev.scores)
    _, rejected = error_counts(dev, cands)
    ok = np.flatnonzero(rejected <= target * dev.live.size + 1e-9)
    theta = float(cands[ok[-1]])
    return theta, theta == float(cands[0])


def auc(score_set: ScoreSet) -> float:
    """P(live score > attack score) with ties counting one half."""
    score_set.require_both()
    live = score_set.live
    attack = np.sort(score_set.attack)
    below = np.searchsorted(attack, live, side="left")
    equal = np.searchsorted(attack, live, side="right") - below
    return float((below.sum() + 0.5 * equal.sum()) / (live.size * attack.size))


def hter(score_set: ScoreSet, theta: float) -> float:
    """(FAR + FRR) / 2 in percent; FAR is APCER and FRR is BPCER here."""
    apcer, bpcer = error_rates(score_set, theta)
    return float((apcer + bpcer) / 2.0)


# --------------------------------------------------------------------------
# Scoring and protocol runs


def score_catalog(net: CCLNet, catalog: Catalog, batch_size: int = 65536) -> np.ndarray:
    """Per-row liveness scores under the online classifier."""
    dtype = next(net.parameters()).dtype
    out = []
    feats = torch.from_numpy(np.ascontiguousarray(catalog.features))
    was_training = net.training
    net.eval()
    try:
        for start in range(0, len(catalog), batch_size):
            out.append(net.score(feats[start : start + batch_size].to(dtype)).numpy())
    finally:
        net.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def video_scores(catalog: Catalog, frame_scores: np.ndarray) -> ScoreSet:
    """Average frame scores per video."""
    vids = catalog.video_ids()
    n = int(vids.max()) + 1 if vids.size else 0
    sums = np.bincount(vids, weights=frame_scores, minlength=n)
    counts = np.bincount(vids, minlength=n)
    first = np.full(n, -1)
    first[vids[::-1]] = np.arange(len(vids))[::-1]
    labels = catalog.labels[first]
    ids = [catalog.folder_name(int(i)) for i in first]
    return ScoreSet(sums / counts, labels, ids)


def score_split(net: CCLNet, catalog: Catalog) -> ScoreSet:
    if len(catalog) == 0:
        raise ValueError("empty sample set")
    return video_scores(catalog, score_catalog(net, catalog))


@dataclass
class EvalReport:
    protocol_id: str
    threshold: float
    threshold_rule: str
    apcer: float
    bpcer: float
    acer: float
    auc: float
    hter: float | None = None
    sub_reports: dict[str, "EvalReport"] = field(default_factory=dict)
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)

    def to_lines(self) -> list[str]:
        lines = [
            f"protocol={self.protocol_id}",
            f"threshold={self.threshold!r}",
            f"threshold_rule={self.threshold_rule}",
            f"apcer={self.apcer!r}",
            f"bpcer={self.bpcer!r}",
            f"acer={self.acer!r}",
            f"auc={self.auc!r}",
        ]
        if self.hter is not None:
            lines.append(f"hter={self.hter!r}")
        for name, sub in self.sub_reports.items():
            lines += [f"{name}.{line}" for line in sub.to_lines() if not line.startswith("protocol=")]
        for k in sorted(self.mean):
            lines.append(f"mean.{k}={self.mean[k]!r}")
            lines.append(f"std.{k}={self.std[k]!r}")
        return lines

    def write(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n")


def select_threshold(dev: ScoreSet, rule: str = "eer") -> tuple[float, str]:
    if rule == "eer":
        return eer_threshold(dev), "eer"
    if rule.startswith("bpcer"):
        target = float(rule.split("@", 1)[1]) if "@" in rule else 0.01
        theta, boundary = bpcer_target_threshold(dev, target)
        if boundary:
            log.warning("BPCER target %.4f unattainable above threshold 0; accepting all lives", target)
        return theta, f"bpcer@{target}" + (":boundary" if boundary else "")
    if rule.startswith("fixed"):
        return float(rule.split("@", 1)[1]), rule
    raise ValueError(f"unknown threshold rule {rule!r}")


def evaluate_split(net: CCLNet, dev: Catalog, test: Catalog, protocol_id: str, rule: str = "eer") -> EvalReport:
    theta, provenance = select_threshold(score_split(net, dev), rule)
    test_scores = score_split(net, test)
    apcer, bpcer, acer_ = threshold_metrics(test_scores, theta)
    return EvalReport(protocol_id, theta, provenance, apcer, bpcer, acer_, auc(test_scores), hter(test_scores, theta))


def aggregate(protocol_id: str, reports: Mapping[str, EvalReport]) -> EvalReport:
    """Mean and population std over sub-protocol reports."""
    keys = ("apcer", "bpcer", "acer", "auc")
    mean = {k: float(np.mean([getattr(r, k) for r in reports.values()])) for k in keys}
    std = {k: float(np.std([getattr(r, k) for r in reports.values()])) for k in keys}
    return EvalReport(
        protocol_id,
        threshold=math.nan,
        threshold_rule="per-subprotocol",
        apcer=mean["apcer"],
        bpcer=mean["bpcer"],
        acer=mean["acer"],
        auc=mean["auc"],
        sub_reports=dict(reports),
        mean=mean,
        std=std,
    )


def run_protocol(
    model: CCLNet | Mapping[str, CCLNet],
    catalog: Catalog,
    protocol_id: str,
    split_seed: int = 0,
    rule: str = "eer",
) -> EvalReport:
    """Score dev and test of a protocol and report test metrics at the dev threshold.

    For ``"P2"`` pass one model per sub-protocol (``{"P2_1": net, ...}``);
    the report carries each sub-result plus mean and std.
    """
    if protocol_id == "P2":
        if not isinstance(model, Mapping):
            raise TypeError("P2 needs a mapping of sub-protocol id to model")
        subs = {pid: run_protocol(model[pid], catalog, pid, split_seed, rule) for pid in ("P2_1", "P2_2", "P2_3")}
        return aggregate("P2", subs)
    if isinstance(model, Mapping):
        model = model[protocol_id]
    split = build_protocol_split(protocol_id, catalog, split_seed)
    return evaluate_split(model, split.apply(catalog, "dev"), split.apply(catalog, "test"), protocol_id, rule)


def write_scores_csv(score_set: ScoreSet, path: str | Path) -> None:
    lines = ["sample_id,score,label"]
    ids = score_set.sample_ids or [str(i) for i in range(score_set.scores.size)]
    lines += [f"{i},{s!r},{y}" for i, s, y in zip(ids, score_set.scores.tolist(), score_set.labels.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")
