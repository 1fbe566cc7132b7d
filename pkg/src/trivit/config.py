"""Run configuration: flat key=value files with dotted namespaces.

Every known key has a default; unknown keys are rejected loudly so typos
cannot silently fall back.  Values are typed by the schema (int, float,
bool, str) and the assembled sub-configs re-validate themselves.
"""

from dataclasses import dataclass, field

from .model import EncoderConfig
from .prototypes import ProtoConfig
from .supervision import AttnLossWeights
from .synth import SynthConfig


class ConfigError(Exception):
    pass


def _bool(text):
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
SCHEMA = {
    "task": (str, "ef"),
    "seed": (int, 0),
    "data.seed": (int, 0),
    "data.n_train": (int, 500),
    "data.n_val": (int, 100),
    "data.n_test": (int, 100),
    "data.views": (int, 2),
    "data.frames": (int, 8),
    "data.height": (int, 32),
    "data.width": (int, 32),
    "data.noise": (float, 0.03),
    "data.ef_min": (float, 0.05),
    "data.ef_max": (float, 0.95),
    "model.patch": (int, 8),
    "model.dim": (int, 32),
    "model.layers": (int, 2),
    "model.heads": (int, 4),
    "model.mlp_hidden": (int, 64),
    "model.dropout": (float, 0.1),
    "train.steps": (int, 2000),
    "train.batch": (int, 8),
    "train.lr": (float, 5e-4),
    "train.weight_decay": (float, 0.0),
    "train.eval_every": (int, 100),
    "train.patience": (int, 10),
    "attn.lambda_spatial": (float, 1.0),
    "attn.lambda_temporal": (float, 1.0),
    "attn.temporal_mode": (str, "frames"),
    "proto.enabled": (_bool, False),
    "proto.per_class": (int, 4),
    "proto.temporal_per_class": (int, 4),
    "proto.spatial_frac": (float, 0.25),
    "proto.temporal_frac": (float, 0.5),
    "proto.steps": (int, 400),
    "proto.lr": (float, 0.05),
    "proto.batch": (int, 32),
}


def parse_config_text(text):
    """key=value lines -> fully-defaulted flat dict; unknown keys rejected."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return values


@dataclass
class TrainSettings:
    steps: int = 2000
    batch: int = 8
    lr: float = 5e-4
    weight_decay: float = 0.0
    eval_every: int = 100
    patience: int = 10

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.lr <= 0:
            raise ConfigError("steps must be >= 0, batch >= 1, lr > 0")
        if self.eval_every < 1 or self.patience < 1:
            raise ConfigError("eval_every and patience must be >= 1")


@dataclass
class RunConfig:
    task: str = "ef"
    seed: int = 0
    data: SynthConfig = field(default_factory=SynthConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    attn: AttnLossWeights = field(default_factory=AttnLossWeights)
    proto: ProtoConfig = field(default_factory=ProtoConfig)
    proto_enabled: bool = False

    def __post_init__(self):
        if self.task not in ("ef", "as"):
            raise ConfigError(f"task must be 'ef' or 'as', got {self.task!r}")


def _sub(values, prefix):
    return {key.split(".", 1)[1]: val for key, val in values.items() if key.startswith(prefix + ".")}


def build_run_config(values, seed_override=None):
    """Assemble a validated RunConfig from a flat parsed dict."""
    task = values["task"]
    seed = int(seed_override) if seed_override is not None else values["seed"]
    # sub-config constructors re-validate and raise their own errors
    data = SynthConfig(task=task, **_sub(values, "data"))
    model = EncoderConfig(
        views=data.views, frames=data.frames, height=data.height, width=data.width, **_sub(values, "model")
    )
    train = TrainSettings(**_sub(values, "train"))
    attn = AttnLossWeights(
        lambda_spatial=values["attn.lambda_spatial"],
        lambda_temporal=values["attn.lambda_temporal"],
        temporal_mode=values["attn.temporal_mode"],
    )
    proto_kwargs = {k: v for k, v in _sub(values, "proto").items() if k != "enabled"}
    proto = ProtoConfig(seed=seed, **proto_kwargs)
    return RunConfig(
        task=task,
        seed=seed,
        data=data,
        model=model,
        train=train,
        attn=attn,
        proto=proto,
        proto_enabled=values["proto.enabled"],
    )


def load_config(path, seed_override=None):
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    return build_run_config(values, seed_override)


def default_config(**overrides):
    """RunConfig from schema defaults plus programmatic overrides (flat keys)."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for key, val in overrides.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    return build_run_config(values)
