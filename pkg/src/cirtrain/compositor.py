"""Twin attention-based fusion of reference and target images, plus the
text-reasoning loss that matches the fused vector against the text.

Each branch anchors one image as a persistent query while the other image's
representation evolves through M plain attention layers (no residuals).
Within a branch all layers share one weight set, so parameter count does
not grow with depth; across branches the weights are independent unless
explicitly shared.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .objective import in_batch_nll, stack_rows
from .tensor import (
    Param,
    Tensor,
    add,
    concat,
    l2_normalize_rows,
    matmul,
    mean_axis,
    scalar_mul,
    slice_cols,
    slice_rows,
    softmax_rows,
    transpose,
)

log = logging.getLogger(__name__)

TARGET_ORIENTED = "target_oriented"
REFERENCE_ORIENTED = "reference_oriented"


class _BranchWeights:
    def __init__(self, name: str, dim: int, rng: np.random.Generator):
        scale = 1.0 / math.sqrt(dim)
        self.wq = Param(f"{name}.wq", rng.normal(0.0, scale, (dim, dim)))
        self.wk = Param(f"{name}.wk", rng.normal(0.0, scale, (dim, dim)))
        self.wv = Param(f"{name}.wv", rng.normal(0.0, scale, (dim, dim)))

    def params(self):
        return [self.wq, self.wk, self.wv]


class CompositorParams:
    """Weights and layout of the two fusion branches."""

    def __init__(
        self,
        dim: int,
        rng: np.random.Generator,
        layers: int = 4,
        heads: int = 1,
        share_branches: bool = False,
    ):
        if layers < 1:
            raise ValueError("compositor needs at least one attention layer")
        if heads < 1 or dim % heads != 0:
            raise ValueError(f"head count {heads} must divide dim {dim}")
        self.dim = dim
        self.layers = layers
        self.heads = heads
        self.share_branches = share_branches
        self.target_branch = _BranchWeights("compositor.target_branch", dim, rng)
        self.reference_branch = (
            self.target_branch
            if share_branches
            else _BranchWeights("compositor.reference_branch", dim, rng)
        )

    def branch(self, name: str) -> _BranchWeights:
        if name == TARGET_ORIENTED:
            return self.target_branch
        if name == REFERENCE_ORIENTED:
            return self.reference_branch
        raise ValueError(f"unknown branch {name!r}")

    def params(self):
        out = list(self.target_branch.params())
        if not self.share_branches:
            out += self.reference_branch.params()
        return out


def _attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    dim = q.shape[1]
    if heads == 1:
        logits = scalar_mul(matmul(q, transpose(k)), 1.0 / math.sqrt(dim))
        return matmul(softmax_rows(logits), v)
    dh = dim // heads
    outs = []
    for h in range(heads):
        qh = slice_cols(q, h * dh, (h + 1) * dh)
        kh = slice_cols(k, h * dh, (h + 1) * dh)
        vh = slice_cols(v, h * dh, (h + 1) * dh)
        logits = scalar_mul(matmul(qh, transpose(kh)), 1.0 / math.sqrt(dh))
        outs.append(matmul(softmax_rows(logits), vh))
    return concat(outs, axis=1)


def fuse_branch(anchor: Tensor, other: Tensor, p: CompositorParams, branch: str) -> Tensor:
    """Run M attention layers with `anchor` as the fixed query over the evolving state.

    The state starts at `other`; every layer reuses the branch's single
    weight set.  The result keeps the anchor's row count.
    """
    if anchor.shape[1] != other.shape[1]:
        raise ValueError(f"feature dims disagree: {anchor.shape} vs {other.shape}")
    w = p.branch(branch)
    state = other
    for _ in range(p.layers):
        q = matmul(anchor, w.wq.tensor)
        k = matmul(state, w.wk.tensor)
        v = matmul(state, w.wv.tensor)
        state = _attention(q, k, v, p.heads)
    return state


def compose(f_r_prime: Tensor, f_t: Tensor, p: CompositorParams) -> Tensor:
    """Average the two branches' CLS rows into one L2-normalized 1 x d vector."""
    if f_r_prime.shape[0] == 0 or f_t.shape[0] == 0:
        raise ValueError("compose: inputs must carry a CLS row (row 0)")
    h_target = fuse_branch(f_r_prime, f_t, p, TARGET_ORIENTED)
    h_reference = fuse_branch(f_t, f_r_prime, p, REFERENCE_ORIENTED)
    mean_cls = scalar_mul(add(slice_rows(h_target, 0, 1), slice_rows(h_reference, 0, 1)), 0.5)
    if float(np.linalg.norm(mean_cls.data)) < 1e-12:
        log.warning("degenerate composite vector: branch CLS rows cancel")
    return l2_normalize_rows(mean_cls)


def reasoning_loss(triplet_features, p: CompositorParams, tau: float = 0.1) -> Tensor:
    """Contrast each composite visual vector against all in-batch texts.

    triplet_features is a list of (f_r_prime, f_t, f_c) tensors per batch
    item.  Texts are mean-pooled and L2-normalized; row i of the similarity
    matrix scores composite i against every text, diagonal matched.
    """
    triplets = list(triplet_features)
    b = len(triplets)
    if b == 0:
        raise ValueError("reasoning_loss: empty batch")
    composites = [compose(f_r_prime, f_t, p) for f_r_prime, f_t, _ in triplets]
    texts = [l2_normalize_rows(mean_axis(f_c, axis=0)) for _, _, f_c in triplets]
    sim = matmul(stack_rows(composites), transpose(stack_rows(texts)))
    return in_batch_nll(sim, tau)
