"""Classification, CGD-regularised contrastive and total losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .cgd import CgdMask, DegenerateEmbeddingError, apply_cgd


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_con: float
    l_total: float
    lambda_con: float


def _check_binary(*ys: torch.Tensor) -> None:
    for y in ys:
        if not bool(((y == 0) | (y == 1)).all()):
            raise ValueError("labels must be 0 or 1")


def classification_loss(c1: torch.Tensor, c2: torch.Tensor, y1: torch.Tensor, y2: torch.Tensor) -> torch.Tensor:
    """Mean over pairs of ``(BCE(sigmoid(c1), y1) + BCE(sigmoid(c2), y2)) / 2``."""
    _check_binary(y1, y2)
    b1 = F.binary_cross_entropy_with_logits(c1, y1.to(c1.dtype), reduction="none")
    b2 = F.binary_cross_entropy_with_logits(c2, y2.to(c2.dtype), reduction="none")
    return (0.5 * (b1 + b2)).mean()


def _normalise(v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    norm = torch.linalg.vector_norm(v, dim=-1, keepdim=True)
    ok = (norm > 0).squeeze(-1)
    return v / torch.where(norm > 0, norm, torch.ones_like(norm)), ok


def signed_similarity(
    z_hat: torch.Tensor, p_hat: torch.Tensor, y1: torch.Tensor, y2: torch.Tensor, strict: bool = True
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-pair ``sign * cos(z_hat, p_hat) + 1``; sign is -1 for same labels, +1 otherwise.

    Returns the values and a validity mask (False where either vector has zero
    norm).  With ``strict`` a zero norm raises instead.
    """
    zn, ok_z = _normalise(z_hat)
    pn, ok_p = _normalise(p_hat)
    ok = ok_z & ok_p
    if strict and not bool(ok.all()):
        raise DegenerateEmbeddingError("zero-norm masked embedding in similarity")
    sign = 2.0 * (y1 != y2).to(zn.dtype) - 1.0
    return sign * (zn * pn).sum(-1) + 1.0, ok


def contrastive_terms(
    z1: torch.Tensor,
    z2: torch.Tensor,
    p1: torch.Tensor,
    p2: torch.Tensor,
    y1: torch.Tensor,
    y2: torch.Tensor,
    mask: CgdMask = CgdMask(),
    strict: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-pair contrastive values and the pairs whose both cross terms are defined."""
    _check_binary(y1, y2)
    z1h, z2h, p1h, p2h = apply_cgd((z1, z2, p1.detach(), p2.detach()), mask)
    a, ok_a = signed_similarity(z1h, p2h, y1, y2, strict)
    b, ok_b = signed_similarity(z2h, p1h, y1, y2, strict)
    return 0.5 * (a + b), ok_a & ok_b


def contrastive_loss(
    z1: torch.Tensor,
    z2: torch.Tensor,
    p1: torch.Tensor,
    p2: torch.Tensor,
    y1: torch.Tensor,
    y2: torch.Tensor,
    mask: CgdMask = CgdMask(),
) -> torch.Tensor:
    """Mean over pairs of ``(f_D(z1, p2) + f_D(z2, p1)) / 2`` after CGD masking."""
    values, _ = contrastive_terms(z1, z2, p1, p2, y1, y2, mask, strict=True)
    return values.mean()


def total_loss(l_cls, l_con, lambda_con: float):
    if lambda_con < 0:
        raise ValueError("lambda_con must be >= 0")
    return l_cls + lambda_con * l_con
