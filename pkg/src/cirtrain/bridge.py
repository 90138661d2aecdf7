"""Text-bridged attention from reference to target image, and the alignment loss.

The text acts as a pivot: reference patches attend to words (cosine
association), words attend to target patches, and the product of the two
association matrices, scaled and row-softmaxed, lets each reference patch
attend to target patches it can only reach through the text.  The alignment
loss then contrasts the attentive target features against the reference
features over in-batch negatives.
"""

from __future__ import annotations

import math

import numpy as np

from .objective import in_batch_nll, stack_rows
from .tensor import (
    Param,
    Tensor,
    concat,
    l2_normalize_rows,
    matmul,
    mean_axis,
    scalar_mul,
    softmax_rows,
    transpose,
)


class BridgeParams:
    """Projection weights for the two-hop attention chain.

    With share_text_projection (the default) the text is projected by the
    same matrix in both hops, so w_text_query is literally w_text: one
    storage, one gradient buffer.
    """

    def __init__(
        self,
        dim: int,
        rng: np.random.Generator,
        tau: float = 0.1,
        share_text_projection: bool = True,
    ):
        if tau <= 0:
            raise ValueError("tau must be > 0")
        self.dim = dim
        self.tau = tau
        self.share_text_projection = share_text_projection
        scale = 1.0 / math.sqrt(dim)
        self.w_ref = Param("bridge.w_ref", rng.normal(0.0, scale, (dim, dim)))
        self.w_text = Param("bridge.w_text", rng.normal(0.0, scale, (dim, dim)))
        self.w_text_query = (
            self.w_text
            if share_text_projection
            else Param("bridge.w_text_query", rng.normal(0.0, scale, (dim, dim)))
        )
        self.w_target = Param("bridge.w_target", rng.normal(0.0, scale, (dim, dim)))
        self.w_value = Param("bridge.w_value", rng.normal(0.0, scale, (dim, dim)))

    def params(self):
        out = [self.w_ref, self.w_text, self.w_target, self.w_value]
        if not self.share_text_projection:
            out.insert(2, self.w_text_query)
        return out


def attend_ref_to_text(f_r_bar: Tensor, f_c: Tensor, p: BridgeParams) -> Tensor:
    """N x L cosine association of projected reference rows against projected words."""
    q = l2_normalize_rows(matmul(f_r_bar, p.w_ref.tensor))
    k = l2_normalize_rows(matmul(f_c, p.w_text.tensor))
    return matmul(q, transpose(k))


def attend_text_to_target(f_c: Tensor, f_t: Tensor, p: BridgeParams) -> Tensor:
    """L x N cosine association of projected words against projected target rows."""
    q = l2_normalize_rows(matmul(f_c, p.w_text_query.tensor))
    k = l2_normalize_rows(matmul(f_t, p.w_target.tensor))
    return matmul(q, transpose(k))


def hinge_attention(a_r2c: Tensor, a_c2t: Tensor, dim: int) -> Tensor:
    """Compose the two hops: row-softmax of their product scaled by 1/sqrt(dim)."""
    if a_r2c.shape[1] != a_c2t.shape[0]:
        raise ValueError(f"hinge_attention: inner dims disagree {a_r2c.shape} x {a_c2t.shape}")
    return softmax_rows(scalar_mul(matmul(a_r2c, a_c2t), 1.0 / math.sqrt(dim)))


def query_target(a_r2t: Tensor, f_t: Tensor, p: BridgeParams) -> Tensor:
    """Attentive target features aligned to reference patch positions."""
    return matmul(a_r2t, matmul(f_t, p.w_value.tensor))


def bridged_target_features(f_r_bar: Tensor, f_c: Tensor, f_t: Tensor, p: BridgeParams) -> Tensor:
    """Full chain from one (reference, text, target) feature triple."""
    a_r2c = attend_ref_to_text(f_r_bar, f_c, p)
    a_c2t = attend_text_to_target(f_c, f_t, p)
    return query_target(hinge_attention(a_r2c, a_c2t, f_r_bar.shape[1]), f_t, p)


def _pooled(x: Tensor) -> Tensor:
    return l2_normalize_rows(mean_axis(x, axis=0))


def alignment_loss(triplet_features, p: BridgeParams) -> Tensor:
    """Contrastive alignment of reference features with bridged target features.

    triplet_features is a list of (f_r_bar, f_c, f_t) tensors, one per batch
    item.  For every query the chain is recomputed against every in-batch
    target (each candidate target supplies its own keys and values), the two
    sides are mean-pooled, and their cosine similarities feed the in-batch
    softmax with the matched target on the diagonal.
    """
    triplets = list(triplet_features)
    b = len(triplets)
    if b == 0:
        raise ValueError("alignment_loss: empty batch")
    dim = triplets[0][0].shape[1]

    pooled_refs = [_pooled(f_r_bar) for f_r_bar, _, _ in triplets]
    # per-query and per-candidate projections are reused across the B x B chains
    q_refs = [l2_normalize_rows(matmul(f_r_bar, p.w_ref.tensor)) for f_r_bar, _, _ in triplets]
    k_texts = [l2_normalize_rows(matmul(f_c, p.w_text.tensor)) for _, f_c, _ in triplets]
    q_texts = [l2_normalize_rows(matmul(f_c, p.w_text_query.tensor)) for _, f_c, _ in triplets]
    k_targets = [l2_normalize_rows(matmul(f_t, p.w_target.tensor)) for _, _, f_t in triplets]
    v_targets = [matmul(f_t, p.w_value.tensor) for _, _, f_t in triplets]

    rows = []
    for i in range(b):
        a_r2c = matmul(q_refs[i], transpose(k_texts[i]))
        sims = []
        for j in range(b):
            a_c2t = matmul(q_texts[i], transpose(k_targets[j]))
            a_r2t = softmax_rows(scalar_mul(matmul(a_r2c, a_c2t), 1.0 / math.sqrt(dim)))
            pooled_bridge = _pooled(matmul(a_r2t, v_targets[j]))
            sims.append(matmul(pooled_refs[i], transpose(pooled_bridge)))
        rows.append(concat(sims, axis=1) if b > 1 else sims[0])
    return in_batch_nll(stack_rows(rows), p.tau)
