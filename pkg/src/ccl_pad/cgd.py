"""Context Guided Dropout.

Channels are indexed from 0.  For every positive pair the ``m`` channels
whose squared-normalised magnitudes disagree most between the online and
target embeddings are nominated; nominations are counted over the batch and
the ``m`` most-voted channels are zeroed in every embedding of the batch,
survivors scaled by ``1 / (1 - p_d)``.  All ties go to the smaller index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import torch

VARIANTS = ("standard", "reverse", "bobe", "off")


class DegenerateEmbeddingError(ValueError):
    """An embedding with zero L2 norm reached a normalisation step."""


@dataclass(frozen=True)
class CgdConfig:
    p_d_base: float = 0.15
    variant: str = "standard"
    total_epochs: int = 30

    def __post_init__(self):
        if not 0.0 <= self.p_d_base < 1.0:
            raise ValueError(f"p_d_base must lie in [0, 1), got {self.p_d_base}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown CGD variant {self.variant!r}")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")


@dataclass(frozen=True)
class CgdMask:
    top_k: tuple[int, ...] = ()
    scale: float = 1.0

    @property
    def empty(self) -> bool:
        return not self.top_k


def n_drop(p_d: float, n: int) -> int:
    """``floor(p_d * n)``, guarded against products like 0.29 * 100 = 28.999..."""
    return int(math.floor(p_d * n + 1e-9))


def decay_pd(p_d_base: float, q_cur: int, q: int) -> float:
    """Cosine-decayed drop rate for epoch ``q_cur`` of ``q``; zero from ``q/2`` on."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if q_cur < 0:
        raise ValueError("q_cur must be >= 0")
    if not q_cur < q / 2:
        return 0.0
    return p_d_base / 2.0 * (1.0 + math.cos(2.0 * math.pi * q_cur / q))


def diff_vectors(z: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Rowwise ``|(z/|z|)^2 - (p/|p|)^2|`` for (..., n) inputs."""
    zn = torch.linalg.vector_norm(z, dim=-1, keepdim=True)
    pn = torch.linalg.vector_norm(p, dim=-1, keepdim=True)
    if bool((zn == 0).any()) or bool((pn == 0).any()):
        raise DegenerateEmbeddingError("zero-norm embedding in CGD difference vector")
    return ((z / zn) ** 2 - (p / pn) ** 2).abs()


def drop_selection(delta: torch.Tensor, m: int, variant: str = "standard") -> torch.Tensor:
    """Boolean (..., n) mask of the channels each row nominates for dropping."""
    n = delta.shape[-1]
    if not 0 <= m <= n:
        raise ValueError(f"m={m} outside [0, {n}]")
    if variant not in ("standard", "reverse", "bobe"):
        raise ValueError(f"no per-pair selection for variant {variant!r}")
    desc = torch.sort(delta, dim=-1, descending=True, stable=True).indices
    asc = torch.sort(delta, dim=-1, descending=False, stable=True).indices
    sel = torch.zeros(delta.shape, dtype=torch.bool)
    if variant == "standard":
        return sel.scatter(-1, desc[..., :m], True)
    if variant == "reverse":
        return sel.scatter(-1, asc[..., :m], True)
    n_top, n_bottom = (m + 1) // 2, m // 2
    sel = sel.scatter(-1, desc[..., :n_top], True)
    # Walk the ascending order skipping channels already taken from the top.
    taken = torch.gather(sel, -1, asc)
    rank = torch.cumsum((~taken).to(torch.int64), dim=-1)
    pick = ~taken & (rank <= n_bottom)
    return sel | torch.zeros_like(sel).scatter(-1, asc, pick)


def top_channels(counts: torch.Tensor, m: int) -> tuple[int, ...]:
    """Indices of the ``m`` largest counts, ties to the smaller index, ascending."""
    order = torch.sort(counts, descending=True, stable=True).indices[:m]
    return tuple(sorted(int(i) for i in order))


def build_mask(
    z1: torch.Tensor,
    z2: torch.Tensor,
    p1: torch.Tensor,
    p2: torch.Tensor,
    y1: torch.Tensor,
    y2: torch.Tensor,
    p_d: float,
    variant: str = "standard",
) -> CgdMask:
    """Batch-level mask from the positive pairs of (N, n) embeddings."""
    n = z1.shape[-1]
    m = n_drop(p_d, n)
    positive = (y1 == y2).reshape(-1)
    if variant == "off" or m == 0 or not bool(positive.any()):
        return CgdMask()
    with torch.no_grad():
        k = drop_selection(diff_vectors(z1[positive], p2[positive]), m, variant)
        k_prime = drop_selection(diff_vectors(z2[positive], p1[positive]), m, variant)
        counts = k.sum(0) + k_prime.sum(0)
    return CgdMask(top_channels(counts, m), 1.0 / (1.0 - p_d))


def apply_cgd(embeddings: Iterable[torch.Tensor], mask: CgdMask) -> list[torch.Tensor]:
    """Zero ``mask.top_k`` channels and scale the rest, for each (..., n) tensor."""
    embeddings = list(embeddings)
    if mask.empty:
        return embeddings
    out = []
    for e in embeddings:
        keep = torch.ones(e.shape[-1], dtype=torch.bool)
        keep[list(mask.top_k)] = False
        out.append(torch.where(keep, e * mask.scale, torch.zeros((), dtype=e.dtype)))
    return out


# Per-pair forms mirroring the textbook description; the trainer uses the batched ones.


def pair_diff_vector(z, p) -> torch.Tensor:
    return diff_vectors(torch.as_tensor(z, dtype=torch.float64), torch.as_tensor(p, dtype=torch.float64))


def pair_drop_indices(delta, m: int, variant: str = "standard") -> tuple[int, ...]:
    sel = drop_selection(torch.as_tensor(delta, dtype=torch.float64), m, variant)
    return tuple(int(i) for i in torch.nonzero(sel).flatten())


def batch_vote_topk(index_sets: Sequence[Iterable[int]], n: int, m: int) -> tuple[int, ...]:
    """Vote over nominated channel sets and keep the ``m`` most voted."""
    if not index_sets:
        return ()
    counts = torch.zeros(n, dtype=torch.int64)
    for s in index_sets:
        for t in s:
            if not 0 <= t < n:
                raise ValueError(f"channel index {t} outside [0, {n})")
            counts[t] += 1
    return top_channels(counts, m)
