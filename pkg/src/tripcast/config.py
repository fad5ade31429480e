"""Run configuration: defaults, JSON round trips, and typo-safe parsing.

A config file is the unit of reproducibility. Every key has a default;
unknown keys are rejected (all of them reported at once). All randomness
fans out from the root ``seed``: the data and train seeds are derived from
it unless the file pins them explicitly, and the echoed effective config
always contains the concrete values so a rerun from the echo reproduces
the run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .models import KINDS, ModelSpec
from .pipeline import DEFAULT_SCHEMA, FeatureSchema
from .training import TrainConfig

# fan-out tags for deriving per-component seeds from the root seed
SEED_DATA = 0
SEED_TRAIN = 1
SEED_BUILD = 2


def fan_seed(root: int, tag: int) -> int:
    """Deterministically derive a component seed from the root seed."""
    return int(np.random.SeedSequence((root, tag)).generate_state(1)[0])


@dataclass
class DataConfig:
    source: str = "synth"            # "synth" or "csv"
    trips_path: str = ""             # input file/directory for source="csv"
    n_trips: int = 20
    trip_length: int = 3000
    sample_period_s: float = 0.5
    noise_std: float = 0.01
    velocity_scale: float = 1.0
    savgol_window: int = 21
    savgol_order: int = 2
    target_period_s: float = 5.0
    window: int = 12
    horizon: int = 6
    train_n: int = 4000
    val_n: int = 500
    test_n: int = 500
    split_mode: str = "shuffle"
    seed: int = 0
    schema: dict | None = None       # FeatureSchema override, None = default

    def feature_schema(self) -> FeatureSchema:
        if self.schema is None:
            return DEFAULT_SCHEMA
        return FeatureSchema.from_dict(self.schema)

    def problems(self) -> list:
        out = []
        if self.source not in ("synth", "csv"):
            out.append(f"data.source must be 'synth' or 'csv', "
                       f"got {self.source!r}")
        if self.source == "csv" and not self.trips_path:
            out.append("data.trips_path is required when data.source='csv'")
        for name in ("n_trips", "trip_length", "window", "horizon",
                     "train_n", "val_n", "test_n"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                out.append(f"data.{name} must be a positive integer, got {v!r}")
        if self.split_mode not in ("shuffle", "trip_holdout"):
            out.append(f"data.split_mode must be 'shuffle' or 'trip_holdout', "
                       f"got {self.split_mode!r}")
        if self.schema is not None:
            try:
                self.feature_schema()
            except Exception as exc:   # noqa: BLE001 - report, don't crash
                out.append(f"data.schema is not a valid schema: {exc}")
        return out


@dataclass
class ModelConfig:
    kind: str = "v_tst"
    d_model: int = 128
    n_heads: int = 8
    enc_layers: int = 4
    dec_layers: int = 4
    ffn_width: int = 128
    lstm_layers: int = 4

    def compose_spec(self, data: DataConfig) -> ModelSpec:
        schema = data.feature_schema()
        return ModelSpec(
            kind=self.kind,
            window=data.window,
            horizon=data.horizon,
            n_features=len(schema.input_channels),
            n_targets=len(schema.target_channels),
            d_model=self.d_model,
            n_heads=self.n_heads,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            ffn_width=self.ffn_width,
            lstm_layers=self.lstm_layers,
        )

    def problems(self, data: DataConfig) -> list:
        try:
            self.compose_spec(data)
        except ValueError as exc:
            return [f"model: {exc}"]
        return []


DEFAULT_GRID_CASES = ((12, 6), (30, 6), (50, 30))


@dataclass
class GridConfig:
    kinds: list = field(default_factory=lambda: list(KINDS))
    cases: list = field(default_factory=lambda: [list(c)
                                                 for c in DEFAULT_GRID_CASES])

    def problems(self) -> list:
        out = []
        for k in self.kinds:
            if k not in KINDS:
                out.append(f"grid.kinds entry {k!r} unknown; expected one of: "
                           + ", ".join(KINDS))
        for c in self.cases:
            ok = (isinstance(c, (list, tuple)) and len(c) == 2
                  and all(isinstance(v, int) and v > 0 for v in c))
            if not ok:
                out.append(f"grid.cases entry {c!r} must be a [window, horizon] "
                           "pair of positive integers")
        return out


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/out"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: GridConfig = field(default_factory=GridConfig)

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "data": asdict(self.data),
            "model": asdict(self.model),
            "train": asdict(self.train),
            "grid": asdict(self.grid),
        }
        d["train"]["betas"] = list(self.train.betas)
        return d

    def validate(self) -> None:
        problems = self.data.problems() + self.model.problems(self.data) \
            + self.grid.problems()
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))


def _section(cls, raw: dict, prefix: str, unknown: list) -> dict:
    known = {f.name for f in fields(cls)}
    for k in sorted(set(raw) - known):
        unknown.append(f"{prefix}.{k}" if prefix else k)
    return {k: v for k, v in raw.items() if k in known}


def config_from_dict(d: dict) -> RunConfig:
    """Build a RunConfig, applying defaults and root-seed fan-out.

    Rejects unknown keys anywhere in the tree, reporting every offender in
    one error. Seeds omitted from the data/train sections are derived from
    the root ``seed``.
    """
    if not isinstance(d, dict):
        raise ValueError(f"config root must be an object, got {type(d).__name__}")
    unknown: list = []
    top_known = {"seed", "output_dir", "data", "model", "train", "grid"}
    for k in sorted(set(d) - top_known):
        unknown.append(k)

    sections = {}
    for name, cls in (("data", DataConfig), ("model", ModelConfig),
                      ("train", TrainConfig), ("grid", GridConfig)):
        raw = d.get(name, {})
        if not isinstance(raw, dict):
            raise ValueError(f"config section {name!r} must be an object")
        sections[name] = _section(cls, raw, name, unknown)
    if unknown:
        raise ValueError("unknown config key(s): " + ", ".join(unknown))

    root_seed = d.get("seed", 0)
    if "seed" not in sections["data"]:
        sections["data"]["seed"] = fan_seed(root_seed, SEED_DATA)
    if "seed" not in sections["train"]:
        sections["train"]["seed"] = fan_seed(root_seed, SEED_TRAIN)
    if "betas" in sections["train"]:
        sections["train"]["betas"] = tuple(sections["train"]["betas"])

    cfg = RunConfig(
        seed=root_seed,
        output_dir=d.get("output_dir", "runs/out"),
        data=DataConfig(**sections["data"]),
        model=ModelConfig(**sections["model"]),
        train=TrainConfig(**sections["train"]),
        grid=GridConfig(**sections["grid"]),
    )
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from None
    return config_from_dict(d)


def save_config(cfg: RunConfig, path) -> None:
    """Echo the effective config (all defaults applied) to a file."""
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_overrides(d: dict, overrides: list) -> dict:
    """Apply ``section.key=value`` strings onto a raw config dict.

    Values parse as JSON when possible, else as plain strings, so
    ``-O data.window=30`` and ``-O model.kind=lstm`` both work.
    """
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        dotted, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = dotted.split(".")
        node = d
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {item!r}: {p!r} is not a section")
        node[parts[-1]] = value
    return d
