"""Attention-guided prototype branches, trained post-hoc on a frozen backbone.

Tokens ranked low by the captured cls attention are discarded; each
prototype scores a sample by its best cosine match over the surviving
tokens, and an affine readout maps the C x B similarity grid to class
logits.  After training, every prototype is projected onto its
most-similar surviving training token so explanations can point at real
patches/frames.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .optim import Adam
from .params import ParameterStore

_EPS = 1e-12


class ProtoError(Exception):
    pass


class ContractError(Exception):
    """The frozen backbone changed while the branch trained."""


@dataclass
class ProtoConfig:
    per_class: int = 4  # B, spatial prototypes per class
    temporal_per_class: int = 4  # H', temporal prototypes per class
    classes: int = 4
    spatial_frac: float = 0.25  # M as a fraction of patch tokens per frame
    temporal_frac: float = 0.5  # M' as a fraction of frames per video
    steps: int = 400
    lr: float = 0.05
    batch: int = 32
    seed: int = 0

    def rows(self, level):
        return self.temporal_per_class if level == "temporal" else self.per_class


@dataclass
class FilteredTokens:
    tokens: np.ndarray  # (m, d)
    indices: np.ndarray  # (m,) positions in the original sequence
    attention: np.ndarray  # (m,) the values that ranked them


@dataclass
class PrototypeBank:
    level: str  # "spatial" | "temporal"
    prototypes: ad.Tensor  # (C, B, d)
    readout_w: ad.Tensor  # (C*B, C)
    readout_b: ad.Tensor  # (C,)
    projection: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def classes(self):
        return self.prototypes.shape[0]

    @property
    def per_class(self):
        return self.prototypes.shape[1]

    def as_arrays(self):
        """Flat dict for the checkpoint container, under proto.<level>.*"""
        base = f"proto.{self.level}"
        return {
            f"{base}.prototypes": self.prototypes.data.astype(np.float32),
            f"{base}.readout_w": self.readout_w.data.astype(np.float32),
            f"{base}.readout_b": self.readout_b.data.astype(np.float32),
        }

    @classmethod
    def from_arrays(cls, level, arrays):
        base = f"proto.{level}"
        try:
            return cls(
                level=level,
                prototypes=ad.Tensor(arrays[f"{base}.prototypes"].copy(), requires_grad=True),
                readout_w=ad.Tensor(arrays[f"{base}.readout_w"].copy(), requires_grad=True),
                readout_b=ad.Tensor(arrays[f"{base}.readout_b"].copy(), requires_grad=True),
            )
        except KeyError as exc:
            raise ProtoError(f"checkpoint lacks prototype array {exc}") from None


def filter_tokens(tokens, cls_attention, m):
    """Keep the m highest-attention tokens; ties go to the lower index."""
    tokens = np.asarray(tokens)
    attn = np.asarray(cls_attention)
    n = tokens.shape[0]
    if not 1 <= m <= n:
        raise ProtoError(f"m={m} outside [1, {n}]")
    order = np.argsort(-attn, kind="stable")[:m]
    return FilteredTokens(tokens=tokens[order], indices=order, attention=attn[order])


def _normalize_rows(x):
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / np.maximum(norms, _EPS)


def prototype_similarity(filtered, bank):
    """Best cosine match per prototype over the retained tokens: (C, B).

    Differentiable w.r.t. the prototypes; the tokens are treated as data.
    """
    tokens = filtered.tokens if isinstance(filtered, FilteredTokens) else np.asarray(filtered)
    c, b, d = bank.prototypes.shape
    tok_n = _normalize_rows(tokens.astype(bank.prototypes.dtype))
    flat = ad.reshape(bank.prototypes, c * b, d)
    norm = ad.sqrt(ad.reduce_sum(ad.square(flat), axis=1, keepdims=True) + _EPS)
    p_n = ad.div(flat, norm)
    sims = ad.matmul(p_n, tok_n.T)  # (C*B, m)
    return ad.reshape(ad.reduce_max(sims, axis=1), c, b)


def proto_logits(sims, bank):
    """Affine readout from the flattened similarity grid to class logits."""
    c, b = bank.classes, bank.per_class
    lead = sims.shape[:-2]
    flat = ad.reshape(sims, *lead, c * b) if lead else ad.reshape(sims, 1, c * b)
    out = ad.add(ad.matmul(flat, bank.readout_w), bank.readout_b)
    return out if lead else ad.reshape(out, c)


def ef_bin_edges(labels, classes=4):
    """Quartile-style bin edges turning continuous EF into C classes."""
    qs = np.linspace(0, 1, classes + 1)[1:-1]
    return np.quantile(np.asarray(labels, dtype=np.float64), qs)


def ef_bin(label, edges):
    return int(np.searchsorted(edges, label, side="right"))


def _sample_class(sample, edges):
    if sample.as_label is not None:
        return int(np.argmax(sample.as_label))
    return ef_bin(sample.ef_label, edges)


def collect_tokens(backbone, samples, level, proto_cfg, batch=16):
    """Run the frozen backbone and keep the attention-filtered tokens.

    Returns (tokens (N, M_tot, d), provenance (N, M_tot, 3), labels (N,)).
    Provenance columns are (view, frame, patch) at the spatial level and
    (view, frame, -1) at the temporal level.
    """
    cfg = backbone.cfg
    if level == "spatial":
        per_seq = max(1, int(round(proto_cfg.spatial_frac * cfg.num_patches)))
    elif level == "temporal":
        per_seq = max(1, int(round(proto_cfg.temporal_frac * cfg.frames)))
    else:
        raise ProtoError(f"unknown level {level!r}")

    edges = None
    if samples[0].ef_label is not None:
        edges = ef_bin_edges([s.ef_label for s in samples], proto_cfg.classes)

    all_tokens, all_prov, labels = [], [], []
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        videos = np.stack([s.videos for s in chunk])
        out = backbone.forward_batch(videos, task=None, train=False)
        if level == "spatial":
            toks = out.patch_tokens.data  # (b, K, T, S, d)
            attn = out.spatial_attn.data
        else:
            toks = out.frame_tokens.data  # (b, K, T, d)
            attn = out.temporal_attn.data
        for i, s in enumerate(chunk):
            rows, prov = [], []
            for k in range(cfg.views):
                if level == "spatial":
                    for t in range(cfg.frames):
                        f = filter_tokens(toks[i, k, t], attn[i, k, t], per_seq)
                        rows.append(f.tokens)
                        prov.extend((k, t, int(idx)) for idx in f.indices)
                else:
                    f = filter_tokens(toks[i, k], attn[i, k], per_seq)
                    rows.append(f.tokens)
                    prov.extend((k, int(idx), -1) for idx in f.indices)
            all_tokens.append(np.concatenate(rows, axis=0))
            all_prov.append(np.asarray(prov, dtype=np.int64))
            labels.append(_sample_class(s, edges))
    return np.stack(all_tokens), np.stack(all_prov), np.asarray(labels, dtype=np.int64)


def _batched_similarity(tokens_n, bank):
    """tokens_n: normalized (N, M, d) -> similarity Tensor (N, C*B)."""
    c, b, d = bank.prototypes.shape
    flat = ad.reshape(bank.prototypes, c * b, d)
    norm = ad.sqrt(ad.reduce_sum(ad.square(flat), axis=1, keepdims=True) + _EPS)
    p_n = ad.div(flat, norm)
    cos = ad.matmul(tokens_n, ad.transpose(p_n, (1, 0)))  # (N, M, C*B)
    return ad.reduce_max(cos, axis=1)


def train_prototype_branch(backbone, samples, level, proto_cfg):
    """Fit prototypes + readout on frozen-backbone tokens; returns the bank.

    The backbone is checksummed before and after; any drift raises
    ContractError.  Initial prototypes are real tokens drawn per class so
    similarities are informative from step 0.
    """
    before = backbone.store.checksum()
    tokens, prov, labels = collect_tokens(backbone, samples, level, proto_cfg)
    n, m, d = tokens.shape
    c, rows = proto_cfg.classes, proto_cfg.rows(level)
    rng = np.random.default_rng(proto_cfg.seed)

    init = np.empty((c, rows, d), dtype=np.float32)
    for cls in range(c):
        pool = np.flatnonzero(labels == cls)
        if pool.size == 0:  # class absent: fall back to the global pool
            pool = np.arange(n)
        for r in range(rows):
            i = rng.choice(pool)
            init[cls, r] = tokens[i, rng.integers(m)]

    bank = PrototypeBank(
        level=level,
        prototypes=ad.Tensor(init.astype(np.float32), requires_grad=True),
        readout_w=ad.Tensor((rng.standard_normal((c * rows, c)) * 0.05).astype(np.float32), requires_grad=True),
        readout_b=ad.Tensor(np.zeros(c, dtype=np.float32), requires_grad=True),
    )
    store = ParameterStore()
    store.add("prototypes", bank.prototypes)
    store.add("readout_w", bank.readout_w)
    store.add("readout_b", bank.readout_b)
    opt = Adam(store, lr=proto_cfg.lr)

    tok_n = _normalize_rows(tokens.astype(np.float32))
    onehot = np.eye(c, dtype=np.float32)[labels]
    history = []
    for step in range(proto_cfg.steps):
        idx = rng.permutation(n)[: proto_cfg.batch]
        sims = _batched_similarity(tok_n[idx], bank)
        logits = ad.add(ad.matmul(sims, bank.readout_w), bank.readout_b)
        loss = ad.reduce_mean(ad.cross_entropy_with_logits(logits, onehot[idx]))
        store.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.item()))

    if backbone.store.checksum() != before:
        raise ContractError("backbone parameters changed during prototype training")
    bank.history = history
    project_prototypes(bank, samples, backbone, proto_cfg, tokens=(tokens, prov))
    return bank


def project_prototypes(bank, samples, backbone, proto_cfg, tokens=None):
    """Map each prototype to its most-similar surviving training token.

    Fills bank.projection with provenance dicts (sample id, view, frame,
    patch, similarity); the first-best token wins ties for determinism.
    """
    if tokens is None:
        toks, prov, _ = collect_tokens(backbone, samples, bank.level, proto_cfg)
    else:
        toks, prov = tokens
    n, m, d = toks.shape
    flat = _normalize_rows(toks.reshape(n * m, d).astype(np.float64))
    p = bank.prototypes.data.reshape(-1, d).astype(np.float64)
    p_n = _normalize_rows(p)
    sims = p_n @ flat.T  # (C*rows, N*m)
    best = sims.argmax(axis=1)
    bank.projection = []
    for pid, flat_idx in enumerate(best):
        i, j = divmod(int(flat_idx), m)
        k, t, s = (int(v) for v in prov[i, j])
        bank.projection.append(
            {
                "prototype": pid,
                "class": pid // bank.per_class,
                "sample_id": samples[i].sample_id,
                "k": k,
                "t": t,
                "s": s if bank.level == "spatial" else None,
                "similarity": float(sims[pid, flat_idx]),
            }
        )
    return bank.projection


def projection_json(bank):
    return json.dumps({"level": bank.level, "projection": bank.projection}, indent=2, sort_keys=True)


def proto_predict(bank, tokens):
    """Class predictions for pre-filtered token sets (N, M, d)."""
    tok_n = _normalize_rows(np.asarray(tokens, dtype=np.float32))
    sims = _batched_similarity(tok_n, bank)
    logits = ad.add(ad.matmul(sims, bank.readout_w), bank.readout_b)
    return logits.data.argmax(axis=1)
