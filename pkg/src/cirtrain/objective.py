"""Query-target matching loss, the joint training objective, and gallery scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    concat,
    log,
    matmul,
    mul,
    scalar_mul,
    softmax_rows,
    sum_all,
    transpose,
)


@dataclass(frozen=True)
class ObjectiveWeights:
    """Trade-off weights for the two auxiliary losses plus the shared temperature."""

    alpha: float = 0.45
    beta: float = 0.1
    tau: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass
class LossBreakdown:
    """Per-step scalar values of the three terms and their weighted total."""

    matching: float
    alignment: float | None
    reasoning: float | None
    total: float


def in_batch_nll(sim: Tensor, tau: float) -> Tensor:
    """Mean negative log-likelihood of the diagonal of a B x B similarity matrix.

    Row i holds query i's similarity to every in-batch candidate; candidate i
    is the positive and the rest are negatives.  Shared by all three losses.
    """
    b = sim.shape[0]
    if sim.shape != (b, b):
        raise ValueError(f"in_batch_nll: expected a square matrix, got {sim.shape}")
    log_probs = log(softmax_rows(scalar_mul(sim, 1.0 / tau)))
    diag_sum = sum_all(mul(log_probs, Tensor(np.eye(b))))
    return scalar_mul(diag_sum, -1.0 / b)


def stack_rows(rows) -> Tensor:
    """Concatenate 1 x d tensors into a matrix (single row passes through)."""
    rows = list(rows)
    return rows[0] if len(rows) == 1 else concat(rows, axis=0)


def matching_loss(query_embs, target_embs, w: ObjectiveWeights) -> Tensor:
    """In-batch contrastive loss between pooled query and pooled target embeddings.

    Both inputs are lists of L2-normalized 1 x d tensors; entry i of each list
    belongs to triplet i, so the similarity diagonal holds the positives.
    """
    query_embs, target_embs = list(query_embs), list(target_embs)
    if len(query_embs) == 0:
        raise ValueError("matching_loss: empty batch")
    if len(query_embs) != len(target_embs):
        raise ValueError("matching_loss: query/target counts disagree")
    sim = matmul(stack_rows(query_embs), transpose(stack_rows(target_embs)))
    return in_batch_nll(sim, w.tau)


def total_loss(l_match: Tensor, l_align: Tensor | None, l_reason: Tensor | None,
               w: ObjectiveWeights) -> Tensor:
    """Weighted sum of the three terms; absent auxiliaries contribute nothing."""
    total = l_match
    if l_align is not None:
        total = add(total, scalar_mul(l_align, w.alpha))
    if l_reason is not None:
        total = add(total, scalar_mul(l_reason, w.beta))
    return total


def score_query_against_gallery(query: Tensor, gallery: Tensor) -> Tensor:
    """Cosine score of one query row against each gallery row (rows pre-normalized).

    This is the whole inference-time scoring path: plain dot products, no
    graph recording and no attention machinery.
    """
    if gallery.data.ndim != 2 or gallery.shape[0] == 0:
        raise ValueError("gallery must be a non-empty G x d matrix")
    q = query.data.reshape(-1)
    if q.shape[0] != gallery.shape[1]:
        raise ValueError(f"query dim {q.shape[0]} does not match gallery dim {gallery.shape[1]}")
    return Tensor(gallery.data @ q)
