"""Deterministic training loop with periodic validation and early stopping.

Every random draw (batch order, dropout) comes from a seed-derived
generator keyed by step, so reruns with the same config produce
byte-identical histories and checkpoints.  The best-validation parameter
set is what ends up in the checkpoint.
"""

import json
import os

import numpy as np

from . import autodiff as ad
from .checkpoint import save_store
from .metrics import (
    MetricsReport,
    accuracy,
    constant_baseline_mae,
    detection_accuracy,
    edes_mass,
    in_mask_fraction,
    mae,
    r_squared,
)
from .model import MultiLevelTransformer
from .optim import Adam, OptimizerError
from .prototypes import projection_json, train_prototype_branch
from .samples import collate
from .supervision import attention_loss_batch, overall_loss
from .synth import make_splits


class NumericFailure(Exception):
    """Loss or gradients stopped being finite; carries the failing step."""


def _shuffle_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))


def _dropout_rng(seed, step):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, step)))


def task_loss(out, batch, task):
    if task == "ef":
        return ad.reduce_mean(ad.square(out.ef - batch.ef))
    return ad.reduce_mean(ad.cross_entropy_with_logits(out.as_logits, batch.as_onehot))


def evaluate(model, samples, task, temporal_mode="frames", batch_size=32):
    """Forward the whole list in eval mode; returns (MetricsReport, predictions)."""
    preds, labels = [], []
    frac_parts, mass_parts = [], []
    loss_total = 0.0
    with ad.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            b = collate(chunk, model.cfg.patch, temporal_mode)
            out = model.forward_batch(b.videos, task=task, train=False)
            loss_total += float(task_loss(out, b, task).item()) * len(chunk)
            if task == "ef":
                preds.append(out.ef.data.copy())
                labels.append(b.ef)
            else:
                preds.append(out.as_logits.data.argmax(axis=1))
                labels.append(b.as_onehot.argmax(axis=1))
            if b.supervised.any():
                sup = b.supervised
                frac_parts.append(in_mask_fraction(out.spatial_attn.data[sup], b.inside[sup]))
                mass_parts.append(edes_mass(out.temporal_attn.data[sup], b.ed_index[sup], b.es_index[sup]))
    preds = np.concatenate(preds)
    labels = np.concatenate(labels)
    report = MetricsReport(task=task, count=len(samples), loss=loss_total / len(samples))
    if task == "ef":
        report.mae = mae(preds, labels)
        report.r2 = r_squared(preds, labels)
        report.baseline_mae = constant_baseline_mae(labels)
    else:
        report.accuracy = accuracy(preds, labels)
        report.detection = detection_accuracy(preds, labels)
    if frac_parts:
        report.in_mask_fraction = float(np.mean(frac_parts))
        report.edes_mass = float(np.mean(mass_parts))
    return report, preds


def _selection_score(report, task):
    # lower is better for both tasks after the sign flip
    return report.mae if task == "ef" else -report.accuracy


def train_run(cfg, out_dir=None, splits=None):
    """Train per RunConfig; returns (model, history, splits, banks).

    Writes checkpoint.bin, history.json and (if prototypes are enabled)
    projection JSONs into out_dir when given.  Raises NumericFailure when
    the loss or a gradient stops being finite.  The learning rate ramps
    linearly over the first min(200, steps // 10) updates.
    """
    if splits is None:
        splits = make_splits(cfg.data)
    train_set, val_set = splits["train"], splits["val"]
    model = MultiLevelTransformer(cfg.model, seed=cfg.seed)
    opt = Adam(model.store, lr=cfg.train.lr, weight_decay=cfg.train.weight_decay)
    # linear lr warmup while Adam's moment estimates calibrate; without it the
    # first ~100 updates can collapse the encoders into constant predictions
    warmup = min(200, max(1, cfg.train.steps // 10))
    shuffle = _shuffle_rng(cfg.seed)
    use_attn = cfg.task == "ef" and (cfg.attn.lambda_spatial > 0 or cfg.attn.lambda_temporal > 0)

    history = []
    best = None  # (score, step, values)
    evals_since_best = 0
    order = np.empty(0, dtype=np.int64)
    cursor = 0
    stopped_early = False
    for step in range(cfg.train.steps):
        if cursor + cfg.train.batch > order.size:
            order = shuffle.permutation(len(train_set))
            cursor = 0
        idx = order[cursor : cursor + cfg.train.batch]
        cursor += cfg.train.batch
        batch = collate([train_set[int(i)] for i in idx], model.cfg.patch, cfg.attn.temporal_mode)

        try:
            out = model.forward_batch(batch.videos, task=cfg.task, train=True, rng=_dropout_rng(cfg.seed, step))
            loss = task_loss(out, batch, cfg.task)
            if use_attn and batch.supervised.any():
                loss = overall_loss(loss, attention_loss_batch(out.spatial_attn, out.temporal_attn, batch, cfg.attn))
            value = float(loss.item())
            if not np.isfinite(value):
                raise NumericFailure(f"non-finite loss at step {step}")
            model.store.zero_grad()
            loss.backward()
            opt.lr = cfg.train.lr * min(1.0, (step + 1) / warmup)
            opt.step()
        except (ad.NonFiniteError, OptimizerError) as exc:
            raise NumericFailure(f"step {step}: {exc}") from exc

        entry = {"step": step, "loss": value}
        if (step + 1) % cfg.train.eval_every == 0 or step + 1 == cfg.train.steps:
            report, _ = evaluate(model, val_set, cfg.task, cfg.attn.temporal_mode)
            entry["val"] = report.to_dict()
            score = _selection_score(report, cfg.task)
            if best is None or score < best[0]:
                best = (score, step, model.store.copy_values())
                evals_since_best = 0
            else:
                evals_since_best += 1
        history.append(entry)
        if evals_since_best >= cfg.train.patience:
            stopped_early = True
            break

    if best is None:  # 0-step run: keep the initial parameters
        report, _ = evaluate(model, val_set, cfg.task, cfg.attn.temporal_mode)
        best = (_selection_score(report, cfg.task), -1, model.store.copy_values())
        history.append({"step": -1, "loss": None, "val": report.to_dict()})
    model.store.load_values(best[2])

    banks = {}
    if cfg.proto_enabled:
        for level in ("spatial", "temporal"):
            banks[level] = train_prototype_branch(model, train_set, level, cfg.proto)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        extra = {}
        for bank in banks.values():
            extra.update(bank.as_arrays())
        save_store(os.path.join(out_dir, "checkpoint.bin"), model.store, extra)
        payload = {"best_step": best[1], "stopped_early": stopped_early, "history": history}
        with open(os.path.join(out_dir, "history.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for level, bank in banks.items():
            with open(os.path.join(out_dir, f"projection_{level}.json"), "w", encoding="utf-8") as fh:
                fh.write(projection_json(bank))
                fh.write("\n")
    return model, history, splits, banks
