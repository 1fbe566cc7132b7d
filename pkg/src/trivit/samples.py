"""Video sample container and batch collation."""

from dataclasses import dataclass

import numpy as np

from .supervision import coarsen_mask, temporal_targets, union_masks


class DataError(Exception):
    pass


@dataclass
class VideoSample:
    """One multi-view grayscale clip with task labels.

    ``videos`` is (views, frames, H, W) with intensities in [0, 1].
    Regression samples carry a scalar label in [0, 1] plus per-view
    ED/ES segmentation masks and frame indices; classification samples
    carry a one-hot label of length 4.
    """

    sample_id: str
    videos: np.ndarray
    ef_label: float | None = None
    as_label: np.ndarray | None = None
    mask_ed: np.ndarray | None = None  # (views, H, W), {0,1}
    mask_es: np.ndarray | None = None
    ed_index: np.ndarray | None = None  # (views,)
    es_index: np.ndarray | None = None

    @property
    def num_views(self):
        return self.videos.shape[0]

    @property
    def num_frames(self):
        return self.videos.shape[1]

    @property
    def has_supervision(self):
        return self.mask_ed is not None and self.ed_index is not None

    def validate(self):
        if self.videos.ndim != 4:
            raise DataError(f"{self.sample_id}: videos must be 4-d, got shape {self.videos.shape}")
        if self.videos.min() < 0.0 or self.videos.max() > 1.0:
            raise DataError(f"{self.sample_id}: intensities outside [0, 1]")
        if self.ef_label is not None and not 0.0 <= self.ef_label <= 1.0:
            raise DataError(f"{self.sample_id}: ef label {self.ef_label} outside [0, 1]")
        if self.as_label is not None:
            lab = np.asarray(self.as_label)
            if lab.shape != (4,) or not np.isclose(lab.sum(), 1.0) or set(np.unique(lab)) - {0.0, 1.0}:
                raise DataError(f"{self.sample_id}: as label must be one-hot length 4")
        if self.ed_index is not None:
            t = self.num_frames
            for k, (ed, es) in enumerate(zip(self.ed_index, self.es_index)):
                if ed == es:
                    raise DataError(f"{self.sample_id}: view {k} has ED == ES == {ed}")
                if not (0 <= ed < t and 0 <= es < t):
                    raise DataError(f"{self.sample_id}: view {k} ED/ES index outside [0, {t})")
        return self


@dataclass
class Batch:
    """Collated arrays for a forward pass plus supervision targets.

    ``outside`` marks coarse patches outside the per-view ED/ES mask
    union (1 where spatial attention is penalized); ``temporal_target``
    marks frames whose attention is pulled toward 1.  Rows for samples
    without supervision are all zero, so they contribute nothing to the
    attention loss.
    """

    sample_ids: list
    videos: np.ndarray  # (B, K, T, H, W)
    ef: np.ndarray | None
    as_onehot: np.ndarray | None
    outside: np.ndarray  # (B, K, S) float
    inside: np.ndarray  # (B, K, S) float
    temporal_target: np.ndarray  # (B, K, T) float
    supervised: np.ndarray  # (B,) bool
    ed_index: np.ndarray | None
    es_index: np.ndarray | None

    def __len__(self):
        return len(self.sample_ids)


def collate(samples, patch_size, temporal_mode="frames"):
    """Stack samples into a Batch and build attention-supervision targets."""
    b = len(samples)
    k, t = samples[0].num_views, samples[0].num_frames
    h, w = samples[0].videos.shape[2:]
    n_patches = (h // patch_size) * (w // patch_size)

    videos = np.stack([s.videos for s in samples]).astype(np.float32)
    ef = None
    if samples[0].ef_label is not None:
        ef = np.asarray([s.ef_label for s in samples], dtype=np.float32)
    as_onehot = None
    if samples[0].as_label is not None:
        as_onehot = np.stack([s.as_label for s in samples]).astype(np.float32)

    outside = np.zeros((b, k, n_patches), dtype=np.float32)
    inside = np.zeros((b, k, n_patches), dtype=np.float32)
    temporal = np.zeros((b, k, t), dtype=np.float32)
    supervised = np.zeros(b, dtype=bool)
    ed_idx = np.zeros((b, k), dtype=np.int64)
    es_idx = np.zeros((b, k), dtype=np.int64)
    for i, s in enumerate(samples):
        if not s.has_supervision:
            continue
        supervised[i] = True
        for view in range(k):
            union = union_masks(
                coarsen_mask(s.mask_ed[view], patch_size),
                coarsen_mask(s.mask_es[view], patch_size),
            )
            inside[i, view] = union
            outside[i, view] = 1.0 - union
            ed, es = int(s.ed_index[view]), int(s.es_index[view])
            ed_idx[i, view], es_idx[i, view] = ed, es
            temporal[i, view] = temporal_targets(t, ed, es, temporal_mode)

    return Batch(
        sample_ids=[s.sample_id for s in samples],
        videos=videos,
        ef=ef,
        as_onehot=as_onehot,
        outside=outside,
        inside=inside,
        temporal_target=temporal,
        supervised=supervised,
        ed_index=ed_idx if supervised.any() else None,
        es_index=es_idx if supervised.any() else None,
    )
