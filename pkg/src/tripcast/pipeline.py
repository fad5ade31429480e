"""Trip-log ingestion and dataset preparation.

The path from raw logs to supervised samples: parse trip CSVs, collapse
redundant sensor groups (the four vent thermometers become one averaged
channel), Savitzky-Golay smooth each channel, decimate to the model time
step, cut sliding windows, then shuffle, split, and z-score normalize with
statistics taken from the training portion only.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serialize
from .savgol import savgol_smooth

log = logging.getLogger(__name__)

RAW_SAMPLE_PERIOD_S = 0.1


@dataclass
class TripSeries:
    """One drive's worth of equal-length sensor channels."""

    trip_id: str
    sample_period_s: float
    channels: dict  # name -> float64 1-d array, insertion-ordered

    def __post_init__(self):
        lengths = {name: len(seq) for name, seq in self.channels.items()}
        if len(set(lengths.values())) > 1:
            raise ValueError(
                f"trip {self.trip_id!r}: channel lengths differ: {lengths}"
            )

    @property
    def length(self) -> int:
        for seq in self.channels.values():
            return len(seq)
        return 0

    def replace_channels(self, channels: dict) -> "TripSeries":
        return TripSeries(self.trip_id, self.sample_period_s, channels)


@dataclass(frozen=True)
class FeatureSchema:
    """Names of model inputs and targets, plus sensor aggregation rules.

    Each aggregation rule is ``(output_name, member_names)``; members are
    averaged into the output channel and dropped.
    """

    input_channels: tuple
    target_channels: tuple
    aggregations: tuple = ()

    def required_raw_channels(self) -> list:
        """Raw CSV columns needed to realize this schema."""
        produced = {out for out, _ in self.aggregations}
        needed = []
        for name in (*self.input_channels, *self.target_channels):
            if name in produced:
                continue
            if name not in needed:
                needed.append(name)
        for _, members in self.aggregations:
            for m in members:
                if m not in needed:
                    needed.append(m)
        return needed

    def to_dict(self) -> dict:
        return {
            "input_channels": list(self.input_channels),
            "target_channels": list(self.target_channels),
            "aggregations": [[out, list(members)]
                             for out, members in self.aggregations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            input_channels=tuple(d["input_channels"]),
            target_channels=tuple(d["target_channels"]),
            aggregations=tuple((out, tuple(members))
                               for out, members in d["aggregations"]),
        )


VENT_CHANNELS = ("vent_temp_fl", "vent_temp_fr", "vent_temp_rl", "vent_temp_rr")

DEFAULT_SCHEMA = FeatureSchema(
    input_channels=(
        "velocity", "acceleration", "throttle", "elevation", "ambient_temp",
        "batt_voltage", "batt_current", "batt_temp", "soc", "heater_power",
        "ac_power", "avg_vent_temp", "cabin_temp", "cabin_setpoint",
        "regen_power",
    ),
    target_channels=("soc", "batt_temp"),
    aggregations=(("avg_vent_temp", VENT_CHANNELS),),
)


@dataclass
class WindowedSample:
    """One supervised example cut from a trip.

    ``x_enc`` covers steps t-W+1..t; ``y`` covers t+1..t+H; ``teacher`` is
    ``y`` shifted back one step, so ``teacher[0]`` is the target value at t.
    """

    x_enc: np.ndarray   # (W, F)
    teacher: np.ndarray  # (H, v)
    y: np.ndarray        # (H, v)
    trip_id: str
    start: int


@dataclass
class NormStats:
    """Per-channel z-score statistics, computed from training data only."""

    input_mean: np.ndarray   # (F,)
    input_std: np.ndarray    # (F,)
    target_mean: np.ndarray  # (v,)
    target_std: np.ndarray   # (v,)

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_mean) / self.input_std

    def normalize_targets(self, y: np.ndarray) -> np.ndarray:
        return (y - self.target_mean) / self.target_std

    def denormalize_targets(self, y: np.ndarray) -> np.ndarray:
        return y * self.target_std + self.target_mean


@dataclass
class DatasetSplit:
    """Shuffled train/validation/test samples in normalized units."""

    train: list
    validation: list
    test: list
    stats: NormStats
    seed: int


# ------------------------------------------------------------------ loading

def load_trips(path, schema: FeatureSchema = DEFAULT_SCHEMA,
               sample_period_s: float = RAW_SAMPLE_PERIOD_S) -> list:
    """Parse one trip CSV, or every ``*.csv`` in a directory (sorted)."""
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.csv"))
        if not files:
            raise ValueError(f"{p}: no .csv trip files found")
    elif p.exists():
        files = [p]
    else:
        raise ValueError(f"{p}: no such file or directory")
    return [_load_trip_file(f, schema, sample_period_s) for f in files]


def _load_trip_file(path: Path, schema: FeatureSchema,
                    sample_period_s: float) -> TripSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in schema.required_raw_channels() if c not in header]
        if missing:
            raise ValueError(
                f"{path}: missing required column(s): {', '.join(missing)}"
            )
        keep = [(i, name) for i, name in enumerate(header) if name in
                set(schema.required_raw_channels())]
        columns = {name: [] for _, name in keep}
        n_cols = len(header)
        for row_num, row in enumerate(reader, start=2):
            if len(row) != n_cols:
                raise ValueError(
                    f"{path}: ragged row {row_num}: expected {n_cols} cells, "
                    f"got {len(row)}"
                )
            for i, name in keep:
                cell = row[i].strip()
                try:
                    columns[name].append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric cell {cell!r} at row {row_num}, "
                        f"column {header[i]!r}"
                    ) from None
    if not columns or not next(iter(columns.values())):
        raise ValueError(f"{path}: no data rows")
    channels = {name: np.asarray(vals, dtype=np.float64)
                for name, vals in columns.items()}
    for name, arr in channels.items():
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise ValueError(
                f"{path}: non-finite value in column {name!r} at data row "
                f"{bad + 2}"
            )
    return TripSeries(path.stem, sample_period_s, channels)


def write_trip_csv(trip: TripSeries, path) -> None:
    """Write a trip as a UTF-8 CSV: header of channel names, one row per sample."""
    names = list(trip.channels)
    cols = [trip.channels[n] for n in names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*cols):
            writer.writerow([format(v, ".17g") for v in row])


# -------------------------------------------------------------- transforms

def aggregate_redundant(trip: TripSeries,
                        schema: FeatureSchema = DEFAULT_SCHEMA) -> TripSeries:
    """Average each aggregation group into its output channel, dropping members."""
    channels = dict(trip.channels)
    for out, members in schema.aggregations:
        missing = [m for m in members if m not in channels]
        if missing:
            raise ValueError(
                f"trip {trip.trip_id!r}: aggregation {out!r} is missing member "
                f"channel(s): {', '.join(missing)}"
            )
        stacked = np.stack([channels[m] for m in members])
        for m in members:
            del channels[m]
        channels[out] = stacked.mean(axis=0)
    return trip.replace_channels(channels)


def smooth_trip(trip: TripSeries, window_len: int,
                poly_order: int) -> TripSeries:
    """Savitzky-Golay filter every channel."""
    channels = {name: savgol_smooth(seq, window_len, poly_order)
                for name, seq in trip.channels.items()}
    return trip.replace_channels(channels)


def resample(trip: TripSeries, target_period_s: float) -> TripSeries:
    """Stride-decimate to a coarser sampling period."""
    ratio = target_period_s / trip.sample_period_s
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9:
        raise ValueError(
            f"target period {target_period_s} s is not an integer multiple of "
            f"the source period {trip.sample_period_s} s"
        )
    channels = {name: seq[::stride].copy() for name, seq in trip.channels.items()}
    out = trip.replace_channels(channels)
    out.sample_period_s = target_period_s
    return out


def make_windows(trip: TripSeries, schema: FeatureSchema,
                 window: int, horizon: int) -> list:
    """Cut stride-1 sliding windows; a too-short trip yields none (warned)."""
    n = trip.length
    if n < window + horizon:
        log.warning("trip %r too short for windowing: length %d < W+H=%d; "
                    "skipped", trip.trip_id, n, window + horizon)
        return []
    missing = [c for c in (*schema.input_channels, *schema.target_channels)
               if c not in trip.channels]
    if missing:
        raise ValueError(
            f"trip {trip.trip_id!r}: schema channel(s) not present: "
            f"{', '.join(missing)} (did aggregation run?)"
        )
    feats = np.stack([trip.channels[c] for c in schema.input_channels], axis=1)
    targs = np.stack([trip.channels[c] for c in schema.target_channels], axis=1)
    samples = []
    for s in range(n - window - horizon + 1):
        t = s + window - 1  # index of the last observed step
        samples.append(WindowedSample(
            x_enc=feats[s:s + window].copy(),
            teacher=targs[t:t + horizon].copy(),
            y=targs[t + 1:t + 1 + horizon].copy(),
            trip_id=trip.trip_id,
            start=s,
        ))
    return samples


# ------------------------------------------------------------ split & norm

def _compute_stats(train: list) -> NormStats:
    xs = np.stack([s.x_enc for s in train])   # (N, W, F)
    ys = np.stack([s.y for s in train])       # (N, H, v)
    in_mean = xs.mean(axis=(0, 1))
    in_std = xs.std(axis=(0, 1))
    t_mean = ys.mean(axis=(0, 1))
    t_std = ys.std(axis=(0, 1))
    # a flat channel would divide by zero; leave it centered but unscaled
    in_std = np.where(in_std < 1e-12, 1.0, in_std)
    t_std = np.where(t_std < 1e-12, 1.0, t_std)
    return NormStats(in_mean, in_std, t_mean, t_std)


def _normalized(sample: WindowedSample, stats: NormStats) -> WindowedSample:
    return WindowedSample(
        x_enc=stats.normalize_inputs(sample.x_enc),
        teacher=stats.normalize_targets(sample.teacher),
        y=stats.normalize_targets(sample.y),
        trip_id=sample.trip_id,
        start=sample.start,
    )


def normalize_and_split(samples: list, train_n: int, val_n: int, test_n: int,
                        seed: int, mode: str = "shuffle") -> DatasetSplit:
    """Shuffle, split, and z-score normalize a sample list.

    ``mode="shuffle"`` (default) permutes samples and takes exact split
    sizes. ``mode="trip_holdout"`` keeps whole trips together: trips are
    assigned (in seeded shuffled order) to test until ``test_n`` samples are
    reached, then to validation until ``val_n``, and the remainder trains;
    split sizes are then approximate and ``train_n`` is ignored.
    """
    if mode not in ("shuffle", "trip_holdout"):
        raise ValueError(f"unknown split mode {mode!r}; "
                         "expected 'shuffle' or 'trip_holdout'")
    rng = np.random.default_rng(seed)
    if mode == "shuffle":
        need = train_n + val_n + test_n
        if len(samples) < need:
            raise ValueError(
                f"insufficient samples: need {need} "
                f"(train {train_n} + val {val_n} + test {test_n}), "
                f"have {len(samples)}"
            )
        order = rng.permutation(len(samples))
        picked = [samples[i] for i in order]
        train = picked[:train_n]
        val = picked[train_n:train_n + val_n]
        test = picked[train_n + val_n:train_n + val_n + test_n]
    else:
        by_trip = {}
        for s in samples:
            by_trip.setdefault(s.trip_id, []).append(s)
        trip_ids = list(by_trip)
        rng.shuffle(trip_ids)
        test, val, train = [], [], []
        for tid in trip_ids:
            if len(test) < test_n:
                test.extend(by_trip[tid])
            elif len(val) < val_n:
                val.extend(by_trip[tid])
            else:
                train.extend(by_trip[tid])
        if not train or not val or not test:
            raise ValueError(
                "trip_holdout split left an empty portion: "
                f"train {len(train)}, val {len(val)}, test {len(test)} "
                f"samples across {len(trip_ids)} trips"
            )
        order = rng.permutation(len(train))
        train = [train[i] for i in order]
    stats = _compute_stats(train)
    return DatasetSplit(
        train=[_normalized(s, stats) for s in train],
        validation=[_normalized(s, stats) for s in val],
        test=[_normalized(s, stats) for s in test],
        stats=stats,
        seed=seed,
    )


# ------------------------------------------------------------ full pipeline

def prepare_dataset(trips: list, schema: FeatureSchema, window: int,
                    horizon: int, savgol_window: int, savgol_order: int,
                    target_period_s: float, train_n: int, val_n: int,
                    test_n: int, seed: int,
                    split_mode: str = "shuffle") -> DatasetSplit:
    """Run the whole pipeline: aggregate, smooth, resample, window, split."""
    samples = []
    for trip in trips:
        t = aggregate_redundant(trip, schema)
        t = smooth_trip(t, savgol_window, savgol_order)
        t = resample(t, target_period_s)
        samples.extend(make_windows(t, schema, window, horizon))
    return normalize_and_split(samples, train_n, val_n, test_n, seed,
                               mode=split_mode)


# ------------------------------------------------------------- cache files

def _stack_portion(portion: list):
    return (np.stack([s.x_enc for s in portion]),
            np.stack([s.teacher for s in portion]),
            np.stack([s.y for s in portion]),
            np.asarray([s.start for s in portion], dtype=np.float64),
            [s.trip_id for s in portion])


def save_dataset(split: DatasetSplit, path, schema: FeatureSchema,
                 pipeline_meta: dict | None = None) -> None:
    """Serialize a DatasetSplit to a versioned container file."""
    meta = {
        "seed": split.seed,
        "schema": schema.to_dict(),
        "pipeline": pipeline_meta or {},
        "trip_ids": {},
        "counts": {},
    }
    arrays = [
        ("stats.input_mean", split.stats.input_mean),
        ("stats.input_std", split.stats.input_std),
        ("stats.target_mean", split.stats.target_mean),
        ("stats.target_std", split.stats.target_std),
    ]
    for name, portion in (("train", split.train),
                          ("validation", split.validation),
                          ("test", split.test)):
        x, teacher, y, start, trip_ids = _stack_portion(portion)
        arrays += [(f"{name}.x_enc", x), (f"{name}.teacher", teacher),
                   (f"{name}.y", y), (f"{name}.start", start)]
        meta["trip_ids"][name] = trip_ids
        meta["counts"][name] = len(portion)
    serialize.write_container(path, "dataset", meta, arrays)


def load_dataset(path):
    """Read a dataset container; returns ``(split, schema, pipeline_meta)``."""
    _, meta, arrays = serialize.read_container(path, expect_kind="dataset")
    stats = NormStats(
        input_mean=arrays["stats.input_mean"],
        input_std=arrays["stats.input_std"],
        target_mean=arrays["stats.target_mean"],
        target_std=arrays["stats.target_std"],
    )
    portions = {}
    for name in ("train", "validation", "test"):
        x = arrays[f"{name}.x_enc"]
        teacher = arrays[f"{name}.teacher"]
        y = arrays[f"{name}.y"]
        start = arrays[f"{name}.start"]
        trip_ids = meta["trip_ids"][name]
        portions[name] = [
            WindowedSample(x[i], teacher[i], y[i], trip_ids[i], int(start[i]))
            for i in range(len(trip_ids))
        ]
    split = DatasetSplit(train=portions["train"],
                         validation=portions["validation"],
                         test=portions["test"], stats=stats,
                         seed=int(meta["seed"]))
    schema = FeatureSchema.from_dict(meta["schema"])
    return split, schema, meta.get("pipeline", {})
