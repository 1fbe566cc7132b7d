"""Attention supervision: mask coarsening and spatial/temporal penalties.

The spatial term pushes patch attention to zero outside the union of the
coarsened ED and ES masks and is applied to every frame of a supervised
video; the temporal term pulls frame attention toward one on the target
frames.  Per-sample losses are plain sums over penalized entries; batch
losses average the per-sample sums.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

TEMPORAL_MODES = ("frames", "interval")


@dataclass
class AttnLossWeights:
    lambda_spatial: float = 1.0
    lambda_temporal: float = 1.0
    temporal_mode: str = "frames"

    def __post_init__(self):
        if not 0.0 <= self.lambda_spatial <= 1.0 or not 0.0 <= self.lambda_temporal <= 1.0:
            raise ValueError("attention loss weights must lie in [0, 1]")
        if self.temporal_mode not in TEMPORAL_MODES:
            raise ValueError(f"temporal_mode must be one of {TEMPORAL_MODES}, got {self.temporal_mode!r}")


def coarsen_mask(mask, patch_size):
    """OR-pool a (H, W) binary mask onto the patch grid, flattened row-major.

    A patch counts as inside if any of its pixels is inside, so index i of
    the output aligns with patch token i of the tokenizer.
    """
    m = np.asarray(mask)
    h, w = m.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"mask shape {m.shape} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    blocks = m.reshape(gh, patch_size, gw, patch_size)
    return (blocks.max(axis=(1, 3)) > 0).astype(np.float32).reshape(-1)


def union_masks(a, b):
    return np.maximum(np.asarray(a, dtype=np.float32), np.asarray(b, dtype=np.float32))


def temporal_targets(num_frames, ed, es, mode="frames"):
    """{0,1} vector of frames whose attention is pulled toward 1."""
    if mode not in TEMPORAL_MODES:
        raise ValueError(f"temporal_mode must be one of {TEMPORAL_MODES}, got {mode!r}")
    target = np.zeros(num_frames, dtype=np.float32)
    if mode == "interval":
        lo, hi = min(ed, es), max(ed, es)
        target[lo : hi + 1] = 1.0
    else:
        target[ed] = 1.0
        target[es] = 1.0
    return target


def spatial_attention_loss(attn, union):
    """Sum of squared attention over patches outside the union mask.

    attn: Tensor of patch attention; union: same-length {0,1} mask where
    1 marks patches inside the ED/ES union.  Differentiable in attn.
    """
    outside = 1.0 - np.asarray(union, dtype=np.float64)
    return ad.reduce_sum(ad.square(ad.mul(attn, outside)))


def temporal_attention_loss(attn, ed, es, mode="frames"):
    """Sum of (attention - 1)^2 over the target frames.

    Non-target frames are untouched: their attention shrinks only through
    the softmax normalization.
    """
    t = attn.shape[-1]
    if not (0 <= ed < t and 0 <= es < t):
        raise ValueError(f"ED/ES indices ({ed}, {es}) outside [0, {t})")
    target = temporal_targets(t, ed, es, mode)
    return ad.reduce_sum(ad.mul(ad.square(attn - 1.0), target))


def total_attention_loss(record, union, ed, es, weights):
    """Weighted attention loss for one sample.

    record: AttentionRecord with spatial (K, T, S) and temporal (K, T)
    tensors; union: (K, S) per-view coarse union masks; ed/es: (K,) frame
    indices.  The spatial term sums over every frame of every view against
    that view's union mask; the temporal term sums over views.
    """
    outside = 1.0 - np.asarray(union, dtype=np.float64)
    spatial = ad.reduce_sum(ad.square(ad.mul(record.spatial, outside[:, None, :])))
    t = record.temporal.shape[-1]
    targets = np.stack([temporal_targets(t, int(e), int(s), weights.temporal_mode) for e, s in zip(ed, es)])
    temporal = ad.reduce_sum(ad.mul(ad.square(record.temporal - 1.0), targets))
    return ad.add(
        ad.mul(temporal, float(weights.lambda_temporal)),
        ad.mul(spatial, float(weights.lambda_spatial)),
    )


def attention_loss_batch(spatial_attn, temporal_attn, batch, weights):
    """Mean over samples of the per-sample attention loss.

    spatial_attn: Tensor (B, K, T, S); temporal_attn: Tensor (B, K, T).
    Samples without supervision have all-zero outside/target rows in the
    batch and contribute zero to both terms.
    """
    b = spatial_attn.shape[0]
    outside = batch.outside[:, :, None, :]  # broadcast the union over frames
    spatial = ad.reduce_sum(ad.square(ad.mul(spatial_attn, outside)), axis=(1, 2, 3))
    temporal = ad.reduce_sum(ad.mul(ad.square(temporal_attn - 1.0), batch.temporal_target), axis=(1, 2))
    per_sample = ad.add(
        ad.mul(spatial, float(weights.lambda_spatial)),
        ad.mul(temporal, float(weights.lambda_temporal)),
    )
    return ad.mul(ad.reduce_sum(per_sample), 1.0 / b)


def overall_loss(task_loss, attn_loss):
    """Total training objective: task term plus attention term."""
    return ad.add(task_loss, attn_loss)
