"""Command-line harness: train, eval, explain, ablate, gradcheck.

Exit codes: 0 success, 1 validation/config error, 2 numeric failure.
All reports are JSON with sorted keys so reruns are byte-identical;
attention maps are additionally dumped as plain-text grids.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_into_store
from .config import ConfigError, default_config, load_config
from .gradcheck import OracleInvalidError, grad_check
from .metrics import in_mask_fraction
from .model import CapacityError, MultiLevelTransformer
from .model import ConfigError as ModelConfigError
from .optim import OptimizerError
from .prototypes import ContractError, ProtoError, PrototypeBank, filter_tokens, prototype_similarity
from .samples import DataError, collate
from .supervision import AttnLossWeights, attention_loss_batch, overall_loss
from .synth import SynthError, make_splits
from .train import NumericFailure, evaluate, task_loss, train_run

_VALIDATION_ERRORS = (
    ConfigError,
    ModelConfigError,
    CapacityError,
    SynthError,
    DataError,
    ProtoError,
    CheckpointError,
    FileNotFoundError,
    ValueError,
)
_NUMERIC_ERRORS = (NumericFailure, ad.NonFiniteError, OptimizerError, OracleInvalidError, ContractError)


def _write_json(path, payload):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_cfg(args):
    if args.config:
        return load_config(args.config, seed_override=args.seed)
    overrides = {"seed": args.seed} if args.seed is not None else {}
    return default_config(**overrides)


def _restore(cfg, checkpoint_path):
    """Model + prototype banks (if stored) from a checkpoint file."""
    model = MultiLevelTransformer(cfg.model, seed=cfg.seed)
    leftover = load_into_store(checkpoint_path, model.store, prefix_filter="proto.")
    banks = {}
    for level in ("spatial", "temporal"):
        if f"proto.{level}.prototypes" in leftover:
            banks[level] = PrototypeBank.from_arrays(level, leftover)
    return model, banks


def cmd_train(args):
    cfg = _load_cfg(args)
    out_dir = args.out or "out"
    model, history, splits, banks = train_run(cfg, out_dir=out_dir)
    report, _ = evaluate(model, splits["test"], cfg.task, cfg.attn.temporal_mode)
    _write_json(os.path.join(out_dir, "metrics.json"), report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_eval(args):
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    cfg = _load_cfg(args)
    model, _ = _restore(cfg, args.checkpoint)
    splits = make_splits(cfg.data)
    report, _ = evaluate(model, splits["test"], cfg.task, cfg.attn.temporal_mode)
    payload = report.to_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        _write_json(os.path.join(args.out, "metrics.json"), payload)
    return 0


def _grid_text(sample_id, cfg, spatial, temporal, video):
    gh, gw = cfg.model.grid
    lines = [f"sample {sample_id}"]
    k_total, t_total = spatial.shape[:2]
    for k in range(k_total):
        for t in range(t_total):
            lines.append(f"view {k} frame {t} spatial attention:")
            grid = spatial[k, t].reshape(gh, gw)
            lines.extend("  " + " ".join(f"{v:.4f}" for v in row) for row in grid)
        lines.append(f"view {k} temporal attention: " + " ".join(f"{v:.4f}" for v in temporal[k]))
    lines.append("video attention: " + " ".join(f"{v:.4f}" for v in video))
    return "\n".join(lines) + "\n"


def _proto_matches(banks, cfg, out, top=3):
    """Best-matching prototypes (with provenance) for one forward pass."""
    matches = {}
    for level, bank in banks.items():
        if level == "spatial":
            toks = out.patch_tokens.data[0]  # (K, T, S, d)
            attn = out.spatial_attn.data[0]
            per = max(1, int(round(cfg.proto.spatial_frac * cfg.model.num_patches)))
            rows = [
                filter_tokens(toks[k, t], attn[k, t], per).tokens
                for k in range(toks.shape[0])
                for t in range(toks.shape[1])
            ]
        else:
            toks = out.frame_tokens.data[0]  # (K, T, d)
            attn = out.temporal_attn.data[0]
            per = max(1, int(round(cfg.proto.temporal_frac * cfg.model.frames)))
            rows = [filter_tokens(toks[k], attn[k], per).tokens for k in range(toks.shape[0])]
        tokens = np.concatenate(rows, axis=0)
        with ad.no_grad():
            sims = prototype_similarity(tokens, bank).data.reshape(-1)
        ranked = np.argsort(-sims, kind="stable")[:top]
        proj = {p["prototype"]: p for p in bank.projection}
        matches[level] = [
            {
                "prototype": int(pid),
                "similarity": float(sims[pid]),
                "projection": proj.get(int(pid)),
            }
            for pid in ranked
        ]
    return matches


def cmd_explain(args):
    if not args.checkpoint:
        raise ConfigError("explain needs --checkpoint")
    cfg = _load_cfg(args)
    model, banks = _restore(cfg, args.checkpoint)
    splits = make_splits(cfg.data)
    pool = {s.sample_id: s for split in splits.values() for s in split}
    if args.samples:
        ids = [s.strip() for s in args.samples.split(",") if s.strip()]
    else:
        ids = [s.sample_id for s in splits["test"][: args.count]]
    out_dir = args.out or "out"
    os.makedirs(out_dir, exist_ok=True)
    for sid in ids:
        if sid not in pool:
            raise ConfigError(f"unknown sample id {sid!r}")
        sample = pool[sid]
        with ad.no_grad():
            out = model.forward_batch(sample.videos[None], task=cfg.task, train=False)
        spatial = out.spatial_attn.data[0]
        temporal = out.temporal_attn.data[0]
        video = out.video_attn.data[0]
        payload = {
            "sample_id": sid,
            "task": cfg.task,
            "spatial_attention": spatial.tolist(),
            "temporal_attention": temporal.tolist(),
            "video_attention": video.tolist(),
        }
        if sample.has_supervision:
            batch = collate([sample], model.cfg.patch, cfg.attn.temporal_mode)
            payload["in_mask_fraction"] = in_mask_fraction(spatial, batch.inside[0])
        if banks:
            payload["prototypes"] = _proto_matches(banks, cfg, out)
        _write_json(os.path.join(out_dir, f"explain_{sid}.json"), payload)
        with open(os.path.join(out_dir, f"explain_{sid}.txt"), "w", encoding="utf-8") as fh:
            fh.write(_grid_text(sid, cfg, spatial, temporal, video))
    print(f"wrote {len(ids)} explanation(s) to {out_dir}")
    return 0


def cmd_ablate(args):
    cfg = _load_cfg(args)
    if cfg.task != "ef":
        raise ConfigError("ablate compares attention supervision and needs task=ef")
    splits = make_splits(cfg.data)
    variants = [
        ("full", cfg.attn.lambda_spatial, cfg.attn.lambda_temporal),
        ("no_spatial", 0.0, cfg.attn.lambda_temporal),
        ("no_temporal", cfg.attn.lambda_spatial, 0.0),
    ]
    rows = []
    for name, lam_s, lam_t in variants:
        weights = AttnLossWeights(lam_s, lam_t, cfg.attn.temporal_mode)
        variant_cfg = dataclasses.replace(cfg, attn=weights)
        model, _, _, _ = train_run(variant_cfg, out_dir=None, splits=splits)
        report, _ = evaluate(model, splits["val"], "ef", cfg.attn.temporal_mode)
        rows.append(
            {
                "name": name,
                "seed": cfg.seed,
                "lambda_spatial": lam_s,
                "lambda_temporal": lam_t,
                "val_mae": report.mae,
                "val_r2": report.r2,
                "in_mask_fraction": report.in_mask_fraction,
                "edes_mass": report.edes_mass,
            }
        )
    payload = {"task": "ef", "seed": cfg.seed, "rows": rows}
    out_dir = args.out or "out"
    _write_json(os.path.join(out_dir, "ablation.json"), payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


TINY_OVERRIDES = {
    "model.dim": 8,
    "model.layers": 1,
    "model.heads": 2,
    "model.mlp_hidden": 16,
    "model.dropout": 0.0,
    "model.patch": 8,
    "data.frames": 4,
    "data.height": 16,
    "data.width": 16,
    "data.n_train": 2,
    "data.n_val": 1,
    "data.n_test": 1,
}


def _gradcheck_loss(task, run_cfg, batch, model):
    # grad_check perturbs model.store in place, so f can just re-run the model
    def f(store):
        assert store is model.store
        out = model.forward_batch(batch.videos, task=task, train=False)
        loss = task_loss(out, batch, task)
        if task == "ef":
            loss = overall_loss(loss, attention_loss_batch(out.spatial_attn, out.temporal_attn, batch, run_cfg.attn))
        return loss

    return f


def cmd_gradcheck(args):
    if args.config:
        base = load_config(args.config, seed_override=args.seed)
        run_cfgs = {base.task: base}
    else:
        overrides = dict(TINY_OVERRIDES)
        if args.seed is not None:
            overrides["seed"] = args.seed
        run_cfgs = {task: default_config(task=task, **overrides) for task in ("ef", "as")}

    corrupt = None
    merged = {}
    reports = {}
    for task, cfg in sorted(run_cfgs.items()):
        samples = [s for s in make_splits(cfg.data)["train"][:2]]
        batch = collate(samples, cfg.model.patch, cfg.attn.temporal_mode)
        model = MultiLevelTransformer(cfg.model, seed=cfg.seed)
        model.store.cast(np.float64)
        if args.corrupt:
            if args.corrupt not in model.store:
                raise ConfigError(f"--corrupt: no parameter named {args.corrupt!r}")
            corrupt = {args.corrupt: 1e-2}
        report = grad_check(_gradcheck_loss(task, cfg, batch, model), model.store, h=1e-5, tol=1e-4, corrupt=corrupt)
        reports[task] = report
        for path, err in report.per_param.items():
            merged[path] = max(err, merged.get(path, 0.0))

    for path in sorted(merged):
        print(f"{path}: max rel err {merged[path]:.3e}")
    passed = all(r.passed for r in reports.values())
    worst = max(reports.values(), key=lambda r: r.max_rel_err)
    print(f"overall max rel err {worst.max_rel_err:.3e} (worst: {worst.worst_param}) -> " + ("PASS" if passed else "FAIL"))
    if args.out:
        _write_json(
            os.path.join(args.out, "gradcheck.json"),
            {
                "passed": passed,
                "max_rel_err": worst.max_rel_err,
                "worst_param": worst.worst_param,
                "per_param": merged,
            },
        )
    if not passed:
        raise NumericFailure(f"gradient check failed at {worst.worst_param} (rel err {worst.max_rel_err:.3e})")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(prog="trivit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (
        ("train", cmd_train),
        ("eval", cmd_eval),
        ("explain", cmd_explain),
        ("ablate", cmd_ablate),
        ("gradcheck", cmd_gradcheck),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--checkpoint", default=None, help="checkpoint container path")
        if name == "explain":
            p.add_argument("--samples", default=None, help="comma-separated sample ids")
            p.add_argument("--count", type=int, default=4, help="how many test samples when --samples absent")
        if name == "gradcheck":
            p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)  # fault-injection hook
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
