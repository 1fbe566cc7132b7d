"""Deterministic synthetic video tasks.

Two desk-scale stand-ins for the clinical targets:

* ``ef``   -- a bright ellipse whose area pulses over one cardiac-style
  cycle.  The regression label equals the fractional area change
  1 - s_min**2, where s_min is the axis scale at end-systole.  Exact
  ED/ES masks and frame indices come from the noiseless geometry.
* ``as``   -- a speckled ring with an angular gap; ring brightness and
  gap width both step monotonically with the 4-way severity class.

Every sample is generated from a seed sequence derived from
(config seed, split, index), so datasets are bitwise reproducible and
splits never share ids.
"""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .samples import VideoSample

SPLIT_CODES = {"train": 0, "val": 1, "test": 2}

# per-view ellipse shape, as fractions of min(H, W): (semi_a, semi_b), angle
_EF_AXES = [(0.33, 0.21), (0.25, 0.30), (0.30, 0.23), (0.22, 0.31)]
_EF_ANGLES = [0.0, 1.1, 0.5, 1.7]

_AS_BRIGHT = (0.35, 0.55, 0.75, 0.95)
_AS_GAP = (2.0, 1.4, 0.8, 0.25)  # full angular width, radians
_AS_SPECKLE = (0.0, 0.04, 0.08, 0.14)

_BG = 0.1
_FG = 0.9


class SynthError(Exception):
    pass


@dataclass
class SynthConfig:
    task: str = "ef"
    seed: int = 0
    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    views: int = 2
    frames: int = 8
    height: int = 32
    width: int = 32
    noise: float = 0.03
    ef_min: float = 0.05
    ef_max: float = 0.95

    def __post_init__(self):
        if self.task not in ("ef", "as"):
            raise SynthError(f"unknown task {self.task!r}")
        if self.frames < 2:
            raise SynthError("need at least 2 frames")
        if self.task == "ef" and self.frames % 2:
            raise SynthError("ef task needs an even frame count so ES lands half a cycle from ED")
        if not 0.0 <= self.noise <= 0.2:
            raise SynthError(f"noise {self.noise} outside [0, 0.2]")
        if self.views < 1:
            raise SynthError("need at least one view")
        if not 0.0 <= self.ef_min <= self.ef_max < 1.0:
            raise SynthError("ef label range must satisfy 0 <= min <= max < 1")
        if min(self.height, self.width) < 8:
            raise SynthError("frames smaller than 8x8 cannot hold the shapes")


def _rng_for(cfg, split, index):
    if split not in SPLIT_CODES:
        raise SynthError(f"unknown split {split!r}")
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(SPLIT_CODES[split], index))
    return np.random.default_rng(ss)


def _grid(h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    return yy.astype(np.float64), xx.astype(np.float64)


def _ellipse(yy, xx, cy, cx, a, b, angle):
    dy, dx = yy - cy, xx - cx
    cos, sin = np.cos(angle), np.sin(angle)
    u = dx * cos + dy * sin
    v = -dx * sin + dy * cos
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _ef_geometry(cfg, rng):
    """Per-view (cy, cx, a, b, angle) with small jitters around fixed bases."""
    h, w = cfg.height, cfg.width
    m = min(h, w)
    out = []
    for view in range(cfg.views):
        af, bf = _EF_AXES[view % len(_EF_AXES)]
        scale = rng.uniform(0.96, 1.04)
        a, b = af * m * scale, bf * m * scale
        cy = (h - 1) / 2 + rng.uniform(-0.05, 0.05) * m
        cx = (w - 1) / 2 + rng.uniform(-0.05, 0.05) * m
        angle = _EF_ANGLES[view % len(_EF_ANGLES)] + rng.uniform(-0.25, 0.25)
        if min(a, b) < 1.0:
            raise SynthError(f"degenerate ellipse: semi-axis {min(a, b):.3f} px below 1 pixel")
        out.append((cy, cx, a, b, angle))
    return out


def gen_ef_sample(cfg, index, split="train"):
    rng = _rng_for(cfg, split, index)
    h, w, t = cfg.height, cfg.width, cfg.frames
    yy, xx = _grid(h, w)

    label = float(rng.uniform(cfg.ef_min, cfg.ef_max))
    s_min = float(np.sqrt(1.0 - label))
    # no pulsation -> every frame ties; pin ED/ES to frames 0 and T/2
    ed = 0 if label == 0.0 else int(rng.integers(0, t))
    es = (ed + t // 2) % t
    geom = _ef_geometry(cfg, rng)

    videos = np.empty((cfg.views, t, h, w), dtype=np.float32)
    mask_ed = np.empty((cfg.views, h, w), dtype=np.uint8)
    mask_es = np.empty((cfg.views, h, w), dtype=np.uint8)
    for view, (cy, cx, a, b, angle) in enumerate(geom):
        for frame in range(t):
            s = s_min + (1.0 - s_min) * (1.0 + np.cos(2.0 * np.pi * (frame - ed) / t)) / 2.0
            inside = _ellipse(yy, xx, cy, cx, a * s, b * s, angle)
            img = np.where(inside, _FG, _BG)
            img = img + rng.normal(0.0, cfg.noise, size=(h, w))
            videos[view, frame] = np.clip(img, 0.0, 1.0)
        mask_ed[view] = _ellipse(yy, xx, cy, cx, a, b, angle)
        mask_es[view] = _ellipse(yy, xx, cy, cx, a * s_min, b * s_min, angle)

    return VideoSample(
        sample_id=f"ef-{split}-{index:04d}",
        videos=videos,
        ef_label=label,
        mask_ed=mask_ed,
        mask_es=mask_es,
        ed_index=np.full(cfg.views, ed, dtype=np.int64),
        es_index=np.full(cfg.views, es, dtype=np.int64),
    ).validate()


def _as_geometry(cfg, rng):
    """Per-view ring parameters; draw order is shared with as_ring_region."""
    h, w = cfg.height, cfg.width
    m = min(h, w)
    out = []
    for view in range(cfg.views):
        r_out = 0.30 * m * rng.uniform(0.95, 1.05)
        r_in = 0.62 * r_out
        cy = (h - 1) / 2 + rng.uniform(-0.04, 0.04) * m
        cx = (w - 1) / 2 + rng.uniform(-0.04, 0.04) * m
        theta0 = rng.uniform(0.0, 2.0 * np.pi)
        drift = rng.uniform(0.15, 0.35) * (1 if rng.uniform() < 0.5 else -1)
        out.append((cy, cx, r_in, r_out, theta0, drift))
    return out


def as_class_of(index):
    """Round-robin class assignment keeps every split near-balanced."""
    return index % 4


def as_ring_region(cfg, index, view, split="train"):
    """Noiseless annulus footprint of one view, for pixel-statistics checks."""
    rng = _rng_for(cfg, split, index)
    cy, cx, r_in, r_out, _, _ = _as_geometry(cfg, rng)[view]
    yy, xx = _grid(cfg.height, cfg.width)
    r = np.hypot(yy - cy, xx - cx)
    return (r >= r_in) & (r <= r_out)


def gen_as_sample(cfg, index, split="train"):
    rng = _rng_for(cfg, split, index)
    h, w, t = cfg.height, cfg.width, cfg.frames
    cls = as_class_of(index)
    geom = _as_geometry(cfg, rng)
    yy, xx = _grid(h, w)

    videos = np.empty((cfg.views, t, h, w), dtype=np.float32)
    for view, (cy, cx, r_in, r_out, theta0, drift) in enumerate(geom):
        r = np.hypot(yy - cy, xx - cx)
        annulus = (r >= r_in) & (r <= r_out)
        ang = np.arctan2(yy - cy, xx - cx)
        speckle = rng.uniform(-1.0, 1.0, size=(h, w))
        bright = _AS_BRIGHT[cls] * (1.0 + _AS_SPECKLE[cls] * speckle)
        for frame in range(t):
            gap_center = theta0 + drift * frame
            diff = np.angle(np.exp(1j * (ang - gap_center)))
            ring = annulus & (np.abs(diff) > _AS_GAP[cls] / 2.0)
            img = np.where(ring, bright, _BG)
            img = img + rng.normal(0.0, cfg.noise, size=(h, w))
            videos[view, frame] = np.clip(img, 0.0, 1.0)

    onehot = np.zeros(4, dtype=np.float32)
    onehot[cls] = 1.0
    return VideoSample(
        sample_id=f"as-{split}-{index:04d}",
        videos=videos,
        as_label=onehot,
    ).validate()


def gen_sample(cfg, index, split="train"):
    if cfg.task == "ef":
        return gen_ef_sample(cfg, index, split)
    return gen_as_sample(cfg, index, split)


def make_splits(cfg):
    """Generate the train/val/test lists described by the config."""
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    return {split: [gen_sample(cfg, i, split) for i in range(n)] for split, n in counts.items()}


# -- on-disk form ---------------------------------------------------------


def export_dataset(out_dir, cfg, splits):
    """Write a manifest plus one array container per split.

    Labels live in the manifest; videos, masks and frame indices in the
    container under ``<sample_id>/<field>``.  Output bytes depend only on
    the inputs.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"task": cfg.task, "config": asdict(cfg), "splits": {}, "labels": {}}
    for split, samples in splits.items():
        arrays = {}
        manifest["splits"][split] = [s.sample_id for s in samples]
        for s in samples:
            arrays[f"{s.sample_id}/videos"] = s.videos
            if s.ef_label is not None:
                manifest["labels"][s.sample_id] = {"ef": s.ef_label}
                arrays[f"{s.sample_id}/mask_ed"] = s.mask_ed.astype(np.float32)
                arrays[f"{s.sample_id}/mask_es"] = s.mask_es.astype(np.float32)
                arrays[f"{s.sample_id}/ed_index"] = s.ed_index.astype(np.float32)
                arrays[f"{s.sample_id}/es_index"] = s.es_index.astype(np.float32)
            else:
                manifest["labels"][s.sample_id] = {"as": int(np.argmax(s.as_label))}
        save_arrays(os.path.join(out_dir, f"{split}.bin"), arrays)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def import_dataset(in_dir):
    """Inverse of export_dataset; every sample is re-validated on load."""
    with open(os.path.join(in_dir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = SynthConfig(**manifest["config"])
    splits = {}
    for split, ids in manifest["splits"].items():
        arrays = load_arrays(os.path.join(in_dir, f"{split}.bin"))
        samples = []
        for sid in ids:
            label = manifest["labels"][sid]
            if "ef" in label:
                sample = VideoSample(
                    sample_id=sid,
                    videos=arrays[f"{sid}/videos"],
                    ef_label=float(label["ef"]),
                    mask_ed=arrays[f"{sid}/mask_ed"].astype(np.uint8),
                    mask_es=arrays[f"{sid}/mask_es"].astype(np.uint8),
                    ed_index=arrays[f"{sid}/ed_index"].astype(np.int64),
                    es_index=arrays[f"{sid}/es_index"].astype(np.int64),
                )
            else:
                onehot = np.zeros(4, dtype=np.float32)
                onehot[int(label["as"])] = 1.0
                sample = VideoSample(sample_id=sid, videos=arrays[f"{sid}/videos"], as_label=onehot)
            samples.append(sample.validate())
        splits[split] = samples
    return cfg, splits
