"""Three-level video transformer: patches -> frames -> videos -> patient.

A spatial encoder summarizes each frame from its patch tokens, a temporal
encoder summarizes each video from its frame summaries, and a video-level
encoder fuses the per-view summaries into one patient embedding consumed
by the regression/classification heads.  All three levels share the same
pre-norm block recipe but own independent parameters.

The cls-row attention of the last layer at each level is captured in the
graph (head-averaged, cls-to-cls mass dropped and renormalized) so the
supervision losses can differentiate through it.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .params import ParameterStore


class ConfigError(Exception):
    pass


class CapacityError(Exception):
    """Token sequence longer than the positional table allows."""


@dataclass
class EncoderConfig:
    patch: int = 8
    dim: int = 32
    layers: int = 2
    heads: int = 4
    mlp_hidden: int = 64
    dropout: float = 0.1
    views: int = 2
    frames: int = 8
    height: int = 32
    width: int = 32

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(f"frame {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ConfigError("need at least one layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        if min(self.views, self.frames, self.mlp_hidden) < 1:
            raise ConfigError("views, frames and mlp_hidden must be positive")

    @property
    def grid(self):
        return self.height // self.patch, self.width // self.patch

    @property
    def num_patches(self):
        gh, gw = self.grid
        return gh * gw

    @property
    def head_dim(self):
        return self.dim // self.heads


@dataclass
class AttentionRecord:
    """cls-row attention at each level for one sample (Tensors, in-graph)."""

    spatial: ad.Tensor  # (K, T, S)
    temporal: ad.Tensor  # (K, T)
    video: ad.Tensor  # (K,)


@dataclass
class TokenCache:
    """Post-LayerNorm token embeddings kept for the prototype branches."""

    patch_tokens: ad.Tensor  # (K, T, S, d)
    frame_tokens: ad.Tensor  # (K, T, d)


@dataclass
class BatchForward:
    """Raw batched forward outputs; everything still attached to the graph."""

    ef: ad.Tensor | None  # (B,)
    as_logits: ad.Tensor | None  # (B, 4)
    as_probs: ad.Tensor | None  # (B, 4)
    spatial_attn: ad.Tensor  # (B, K, T, S)
    temporal_attn: ad.Tensor  # (B, K, T)
    video_attn: ad.Tensor  # (B, K)
    patch_tokens: ad.Tensor  # (B, K, T, S, d)
    frame_tokens: ad.Tensor  # (B, K, T, d)
    summary: ad.Tensor  # (B, d)


def patchify(frames, patch):
    """Split (..., H, W) into (..., HW/p^2, p*p) row-major patch vectors."""
    arr = np.asarray(frames)
    h, w = arr.shape[-2:]
    if h % patch or w % patch:
        raise ConfigError(f"frame {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    lead = arr.shape[:-2]
    x = arr.reshape(lead + (gh, patch, gw, patch))
    x = np.moveaxis(x, -2, -3)  # (..., gh, gw, p, p)
    return np.ascontiguousarray(x).reshape(lead + (gh * gw, patch * patch))


def stitch(patches, height, width, patch):
    """Inverse of patchify; reconstructs frames bit-exactly."""
    arr = np.asarray(patches)
    gh, gw = height // patch, width // patch
    lead = arr.shape[:-2]
    x = arr.reshape(lead + (gh, gw, patch, patch))
    x = np.moveaxis(x, -3, -2)
    return np.ascontiguousarray(x).reshape(lead + (height, width))


class MultiLevelTransformer:
    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.store = ParameterStore()
        self._init_params(np.random.default_rng(seed))

    # -- parameters -------------------------------------------------------

    def _init_params(self, rng):
        cfg = self.cfg
        d, hid = cfg.dim, cfg.mlp_hidden

        def tn(*shape):
            # truncated normal: sigma=0.02, clipped at 2 sigma
            return np.clip(rng.standard_normal(shape) * 0.02, -0.04, 0.04).astype(np.float32)

        def zeros(*shape):
            return np.zeros(shape, dtype=np.float32)

        add = self.store.add
        add("patch_embed.w", tn(cfg.patch * cfg.patch, d))
        add("patch_embed.b", zeros(d))
        slots = {"spatial": cfg.num_patches + 1, "temporal": cfg.frames + 1}
        for level in ("spatial", "temporal", "video"):
            add(f"{level}.cls", tn(d))
            if level in slots:
                add(f"{level}.pos", tn(slots[level], d))
            for i in range(cfg.layers):
                base = f"{level}.block{i}"
                for ln in ("ln1", "ln2"):
                    add(f"{base}.{ln}.gain", np.ones(d, dtype=np.float32))
                    add(f"{base}.{ln}.bias", zeros(d))
                for proj in ("q", "k", "v", "out"):
                    add(f"{base}.attn.{proj}_w", tn(d, d))
                    add(f"{base}.attn.{proj}_b", zeros(d))
                add(f"{base}.mlp.fc1_w", tn(d, hid))
                add(f"{base}.mlp.fc1_b", zeros(hid))
                add(f"{base}.mlp.fc2_w", tn(hid, d))
                add(f"{base}.mlp.fc2_b", zeros(d))
            add(f"{level}.final_ln.gain", np.ones(d, dtype=np.float32))
            add(f"{level}.final_ln.bias", zeros(d))
        add("video.view_embed", tn(cfg.views, d))
        add("ef_head.fc1_w", tn(d, hid))
        add("ef_head.fc1_b", zeros(hid))
        add("ef_head.fc2_w", tn(hid, 1))
        add("ef_head.fc2_b", zeros(1))
        add("as_head.w", tn(d, 4))
        add("as_head.b", zeros(4))

    def _p(self, path):
        return self.store[path]

    @property
    def dtype(self):
        return self._p("patch_embed.w").data.dtype

    # -- encoder ----------------------------------------------------------

    def tokenize(self, patches):
        """Linear patch embedding: (..., p*p) -> (..., d)."""
        x = patches if isinstance(patches, ad.Tensor) else ad.as_tensor(patches, dtype=self.dtype)
        return ad.add(ad.matmul(x, self._p("patch_embed.w")), self._p("patch_embed.b"))

    def _block(self, base, h, train, rng):
        cfg = self.cfg
        b, n1, d = h.shape
        x = ad.layernorm(h, self._p(f"{base}.ln1.gain"), self._p(f"{base}.ln1.bias"))

        def proj(name):
            y = ad.add(ad.matmul(x, self._p(f"{base}.attn.{name}_w")), self._p(f"{base}.attn.{name}_b"))
            y = ad.reshape(y, b, n1, cfg.heads, cfg.head_dim)
            return ad.transpose(y, (0, 2, 1, 3))  # (b, heads, n1, hd)

        q, k, v = proj("q"), proj("k"), proj("v")
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(cfg.head_dim))
        attn = ad.softmax(scores, axis=-1)  # captured pre-dropout
        attn_used = ad.dropout(attn, cfg.dropout, rng) if train else attn
        ctx = ad.transpose(ad.matmul(attn_used, v), (0, 2, 1, 3))
        ctx = ad.reshape(ctx, b, n1, d)
        out = ad.add(ad.matmul(ctx, self._p(f"{base}.attn.out_w")), self._p(f"{base}.attn.out_b"))
        if train:
            out = ad.dropout(out, cfg.dropout, rng)
        h = ad.add(h, out)

        x2 = ad.layernorm(h, self._p(f"{base}.ln2.gain"), self._p(f"{base}.ln2.bias"))
        m = ad.gelu(ad.add(ad.matmul(x2, self._p(f"{base}.mlp.fc1_w")), self._p(f"{base}.mlp.fc1_b")))
        m = ad.add(ad.matmul(m, self._p(f"{base}.mlp.fc2_w")), self._p(f"{base}.mlp.fc2_b"))
        if train:
            m = ad.dropout(m, cfg.dropout, rng)
        return ad.add(h, m), attn

    def encoder_forward(self, level, x, train=False, rng=None):
        """Shared level encoder.

        x: Tensor (batch, n, d).  Returns (summary (batch, d), cls-row
        attention (batch, n), token embeddings (batch, n, d)); attention
        comes from the last layer, averaged over heads, with the cls->cls
        entry dropped and the row renormalized.
        """
        if train and rng is None:
            raise ValueError("training forward needs an rng for dropout")
        b, n, d = x.shape
        cls = ad.broadcast_to(ad.reshape(self._p(f"{level}.cls"), 1, 1, d), (b, 1, d))
        h = ad.concat([cls, x], axis=1)
        if f"{level}.pos" in self.store:
            pos = self._p(f"{level}.pos")
            if n + 1 > pos.shape[0]:
                raise CapacityError(
                    f"{level} encoder got {n} tokens but the positional table holds {pos.shape[0] - 1}"
                )
            h = ad.add(h, ad.reshape(ad.slice_axis(pos, 0, 0, n + 1), 1, n + 1, d))
        attn = None
        for i in range(self.cfg.layers):
            h, attn = self._block(f"{level}.block{i}", h, train, rng)
        h = ad.layernorm(h, self._p(f"{level}.final_ln.gain"), self._p(f"{level}.final_ln.bias"))
        summary = ad.reshape(ad.slice_axis(h, 1, 0, 1), b, d)
        tokens = ad.slice_axis(h, 1, 1, n + 1)

        cls_row = ad.reshape(ad.slice_axis(attn, 2, 0, 1), b, self.cfg.heads, n + 1)
        cls_row = ad.reduce_mean(cls_row, axis=1)  # (b, n+1)
        over_inputs = ad.slice_axis(cls_row, 1, 1, n + 1)
        norm = ad.reduce_sum(over_inputs, axis=1, keepdims=True)
        return summary, ad.div(over_inputs, norm), tokens

    # -- level wrappers (single sample) -----------------------------------

    def ste_forward(self, videos, train=False, rng=None):
        """(K, T, H, W) -> frame summaries (K, T, d), attention (K, T, S), patch tokens."""
        k, t = videos.shape[:2]
        s = patchify(videos, self.cfg.patch).reshape(k * t, -1, self.cfg.patch * self.cfg.patch)
        x = self.tokenize(s)
        summary, attn, tokens = self.encoder_forward("spatial", x, train, rng)
        n = attn.shape[-1]
        d = self.cfg.dim
        return (
            ad.reshape(summary, k, t, d),
            ad.reshape(attn, k, t, n),
            ad.reshape(tokens, k, t, n, d),
        )

    def tte_forward(self, frame_summaries, train=False, rng=None):
        """(K, T, d) -> video summaries (K, d), temporal attention (K, T), frame tokens."""
        summary, attn, tokens = self.encoder_forward("temporal", frame_summaries, train, rng)
        return summary, attn, tokens

    def vte_forward(self, video_summaries, train=False, rng=None):
        """(K, d) -> patient embedding (d,), video attention (K,), view tokens (K, d).

        View-type embeddings are this level's only positional signal: they
        travel with the tokens, so swapping both leaves the output alone.
        """
        k, d = video_summaries.shape
        if k > self.cfg.views:
            raise CapacityError(f"got {k} views but the model holds {self.cfg.views} view embeddings")
        ve = ad.slice_axis(self._p("video.view_embed"), 0, 0, k)
        x = ad.reshape(ad.add(video_summaries, ve), 1, k, d)
        summary, attn, tokens = self.encoder_forward("video", x, train, rng)
        return ad.reshape(summary, d), ad.reshape(attn, k), ad.reshape(tokens, k, d)

    # -- heads ------------------------------------------------------------

    def ef_head(self, u):
        """Sigmoid regression head; output in (0, 1), shape = u batch dims."""
        h = ad.gelu(ad.add(ad.matmul(u, self._p("ef_head.fc1_w")), self._p("ef_head.fc1_b")))
        y = ad.add(ad.matmul(h, self._p("ef_head.fc2_w")), self._p("ef_head.fc2_b"))
        return ad.reshape(ad.sigmoid(y), *u.shape[:-1])

    def as_logits(self, u):
        return ad.add(ad.matmul(u, self._p("as_head.w")), self._p("as_head.b"))

    def as_head(self, u):
        """4-class probability vector(s), rows summing to 1."""
        return ad.softmax(self.as_logits(u), axis=-1)

    # -- full passes ------------------------------------------------------

    def forward_batch(self, videos, task=None, train=False, rng=None):
        """Batched pass over (B, K, T, H, W); all frames share one spatial batch."""
        b, k, t = videos.shape[:3]
        d = self.cfg.dim
        patches = patchify(np.asarray(videos), self.cfg.patch)
        x = self.tokenize(patches.reshape(b * k * t, patches.shape[-2], patches.shape[-1]))
        s_sum, s_attn, s_tok = self.encoder_forward("spatial", x, train, rng)
        n = s_attn.shape[-1]

        frame_seq = ad.reshape(s_sum, b * k, t, d)
        t_sum, t_attn, t_tok = self.encoder_forward("temporal", frame_seq, train, rng)

        if k > self.cfg.views:
            raise CapacityError(f"got {k} views but the model holds {self.cfg.views} view embeddings")
        ve = ad.reshape(ad.slice_axis(self._p("video.view_embed"), 0, 0, k), 1, k, d)
        v_in = ad.add(ad.reshape(t_sum, b, k, d), ve)
        u, v_attn, _ = self.encoder_forward("video", v_in, train, rng)

        ef = self.ef_head(u) if task in (None, "ef") else None
        logits = self.as_logits(u) if task in (None, "as") else None
        return BatchForward(
            ef=ef,
            as_logits=logits,
            as_probs=ad.softmax(logits, axis=-1) if logits is not None else None,
            spatial_attn=ad.reshape(s_attn, b, k, t, n),
            temporal_attn=ad.reshape(t_attn, b, k, t),
            video_attn=v_attn,
            patch_tokens=ad.reshape(s_tok, b, k, t, n, d),
            frame_tokens=ad.reshape(t_tok, b, k, t, d),
            summary=u,
        )

    def full_forward(self, sample, task, train=False, rng=None):
        """One sample end to end: (prediction, AttentionRecord, TokenCache)."""
        out = self.forward_batch(sample.videos[None], task=task, train=train, rng=rng)
        k, t = sample.videos.shape[:2]
        n = out.spatial_attn.shape[-1]
        d = self.cfg.dim
        record = AttentionRecord(
            spatial=ad.reshape(out.spatial_attn, k, t, n),
            temporal=ad.reshape(out.temporal_attn, k, t),
            video=ad.reshape(out.video_attn, k),
        )
        cache = TokenCache(
            patch_tokens=ad.reshape(out.patch_tokens, k, t, n, d),
            frame_tokens=ad.reshape(out.frame_tokens, k, t, d),
        )
        if task == "ef":
            prediction = ad.reshape(out.ef, ())
        elif task == "as":
            prediction = ad.reshape(out.as_probs, 4)
        else:
            raise ValueError(f"task must be 'ef' or 'as', got {task!r}")
        return prediction, record, cache
