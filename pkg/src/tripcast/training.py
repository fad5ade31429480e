"""Loss, metrics, optimizers, the teacher-forced training loop, evaluation,
and the W×H experiment-grid runner.

Training minimizes MSE on normalized targets with Adam (optionally SGD),
global gradient-norm clipping, per-epoch validation, and best-validation
parameter restore with early stopping. Evaluation decodes autoregressively
for decoder-input kinds and reports R² per target in physical units plus a
pooled R² in normalized units.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .models import DECODER_INPUT_KINDS, Model, ModelSpec, build
from .pipeline import DatasetSplit, NormStats
from .tensor import ShapeError, Tensor, mul, no_grad, sub, tmean

GRID_REPORT_VERSION = 1


# ----------------------------------------------------------------- metrics

def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements; differentiable in ``pred``."""
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=np.float64))
    if pred.shape != t.shape:
        raise ShapeError(
            f"mse_loss shapes differ: pred {pred.shape} vs target {t.shape}"
        )
    diff = sub(pred, t)
    return tmean(mul(diff, diff))


def r_squared(pred, target) -> float:
    """Coefficient of determination 1 - SS_res/SS_tot.

    Returns NaN when the target has zero variance (R² undefined); callers
    that need to distinguish that case should check ``math.isnan``.
    """
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"r_squared lengths differ: {p.size} vs {t.size}")
    if t.size < 2:
        raise ValueError(f"r_squared needs at least 2 points, got {t.size}")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    ss_res = float(np.sum((p - t) ** 2))
    return 1.0 - ss_res / ss_tot


# -------------------------------------------------------------- optimizers

def _check_finite_grads(grads: dict, step: int):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient for parameter {name!r} at optimizer "
                f"step {step}"
            )


def clip_gradients(grads: dict, max_norm: float | None) -> float:
    """Scale all gradients in place so their global L2 norm is ≤ max_norm.

    Returns the pre-clip norm.
    """
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and total > max_norm and total > 0.0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


class Adam:
    """Adam with bias-corrected moments (betas 0.9/0.999, epsilon 1e-8)."""

    def __init__(self, params: list, lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}

    def step(self, grads: dict) -> None:
        self.step_count += 1
        _check_finite_grads(grads, self.step_count)
        b1, b2, t = self.beta1, self.beta2, self.step_count
        for name, p in self.params:
            g = grads[name]
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Sgd:
    """Plain gradient descent, kept for comparison runs."""

    def __init__(self, params: list, lr: float):
        self.params = params
        self.lr = lr
        self.step_count = 0

    def step(self, grads: dict) -> None:
        self.step_count += 1
        _check_finite_grads(grads, self.step_count)
        for name, p in self.params:
            p.data = p.data - self.lr * grads[name]


# ------------------------------------------------------------------ config

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # or "sgd"
    betas: tuple = (0.9, 0.999)
    epsilon: float = 1e-8
    grad_clip_norm: float | None = 1.0
    patience: int = 20
    seed: int = 0
    # optional stop once pooled autoregressive validation R² reaches this;
    # computed on the validation split only, so the test set stays unseen
    target_val_r2: float | None = None

    def __post_init__(self):
        problems = []
        if self.epochs < 1:
            problems.append(f"epochs must be ≥ 1, got {self.epochs}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be ≥ 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be positive, "
                            f"got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            problems.append(f"optimizer must be 'adam' or 'sgd', "
                            f"got {self.optimizer!r}")
        if self.patience < 0:
            problems.append(f"patience must be ≥ 0, got {self.patience}")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            problems.append(f"grad_clip_norm must be positive or None, "
                            f"got {self.grad_clip_norm}")
        if self.target_val_r2 is not None and self.target_val_r2 > 1.0:
            problems.append(f"target_val_r2 cannot exceed 1, "
                            f"got {self.target_val_r2}")
        if problems:
            raise ValueError("invalid TrainConfig: " + "; ".join(problems))


def make_optimizer(cfg: TrainConfig, params: list):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate, cfg.betas, cfg.epsilon)
    return Sgd(params, cfg.learning_rate)


# ----------------------------------------------------------- training loop

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stop_reason: str = "max epochs reached"


def _stack_samples(samples: list):
    return (np.stack([s.x_enc for s in samples]),
            np.stack([s.teacher for s in samples]),
            np.stack([s.y for s in samples]))


def _batch_ranges(n: int, batch_size: int):
    return [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def _predict_ar(model: Model, xs, teach, batch_size: int) -> np.ndarray:
    """Inference-mode predictions; decoder kinds autoregress from teach[:,0]."""
    outs = []
    with no_grad():
        for lo, hi in _batch_ranges(len(xs), batch_size):
            out = model.forward(xs[lo:hi], start=teach[lo:hi, 0, :],
                                training=False)
            outs.append(out.data)
    return np.concatenate(outs, axis=0)


def _teacher_forced_loss(model: Model, xs, teach, ys, batch_size: int) -> float:
    total = 0.0
    with no_grad():
        for lo, hi in _batch_ranges(len(xs), batch_size):
            pred = model.forward(xs[lo:hi], teacher=teach[lo:hi],
                                 training=True)
            loss = mse_loss(pred, ys[lo:hi])
            total += float(loss.data) * (hi - lo)
    return total / len(xs)


def train(model: Model, split: DatasetSplit, cfg: TrainConfig,
          on_epoch=None):
    """Teacher-forced minibatch training with best-validation restore.

    Stops early after more than ``cfg.patience`` consecutive epochs without
    validation improvement (``patience=0`` stops at the first non-improving
    epoch), or once ``cfg.target_val_r2`` is reached in autoregressive
    validation. Returns ``(model, TrainLog)`` with the best-validation
    parameters restored.
    """
    spec = model.spec
    xs, teach, ys = _stack_samples(split.train)
    if xs.shape[1:] != (spec.window, spec.n_features):
        raise ShapeError(
            f"dataset windows {xs.shape[1:]} do not match model spec "
            f"(window {spec.window}, features {spec.n_features})"
        )
    vx, vteach, vy = _stack_samples(split.validation)
    n = len(xs)
    rng = np.random.default_rng(cfg.seed)
    params = model.named_params()
    opt = make_optimizer(cfg, params)
    log = TrainLog()
    best_params = {name: p.data.copy() for name, p in params}
    bad_epochs = 0

    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for batch_i, (lo, hi) in enumerate(_batch_ranges(n, cfg.batch_size)):
            idx = order[lo:hi]
            pred = model.forward(xs[idx], teacher=teach[idx], training=True)
            loss = mse_loss(pred, ys[idx])
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise FloatingPointError(
                    f"non-finite training loss ({loss_val}) at epoch {epoch}, "
                    f"batch {batch_i}"
                )
            loss.backward()
            grads = {}
            for name, p in params:
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                if not g.flags.writeable:
                    g = g.copy()
                grads[name] = g
                p.zero_grad()
            clip_gradients(grads, cfg.grad_clip_norm)
            opt.step(grads)
            total += loss_val * len(idx)
        train_loss = total / n
        val_loss = _teacher_forced_loss(model, vx, vteach, vy, cfg.batch_size)
        entry = EpochLog(epoch, train_loss, val_loss,
                         time.perf_counter() - tic)
        log.entries.append(entry)
        if on_epoch is not None:
            on_epoch(entry)

        if val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in params}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                log.stop_reason = (
                    f"early stop: no validation improvement in {bad_epochs} "
                    f"epoch(s) (patience {cfg.patience})"
                )
                break

        if cfg.target_val_r2 is not None:
            preds = _predict_ar(model, vx, vteach, cfg.batch_size)
            val_r2 = r_squared(preds, vy)
            if val_r2 >= cfg.target_val_r2:
                log.stop_reason = (
                    f"target validation R² reached: {val_r2:.4f} ≥ "
                    f"{cfg.target_val_r2} at epoch {epoch}"
                )
                break

    for name, p in params:
        p.data = best_params[name]
    return model, log


# -------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    split: str
    kind: str
    window: int
    horizon: int
    param_count: int
    n_samples: int
    mse: float                    # normalized units, all targets pooled
    mse_per_target: dict          # name -> normalized-unit MSE
    r2_per_target: dict           # name -> R² in physical units
    r2_defined: dict              # name -> False when target variance was zero
    r2_pooled: float              # normalized units, all targets pooled
    wall_clock_seconds: float

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "split": self.split,
            "kind": self.kind,
            "window": self.window,
            "horizon": self.horizon,
            "param_count": self.param_count,
            "n_samples": self.n_samples,
            "mse": self.mse,
            "mse_per_target": dict(self.mse_per_target),
            "r2_per_target": dict(self.r2_per_target),
            "r2_defined": dict(self.r2_defined),
            "r2_pooled": self.r2_pooled,
        }
        if include_timing:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return d


def evaluate(model: Model, samples: list, stats: NormStats,
             target_names=("soc", "batt_temp"), split_name: str = "test",
             batch_size: int = 64) -> EvalReport:
    """Inference-mode metrics; decoder-input kinds decode autoregressively.

    The only ground-truth future information used is none at all: decoding
    is seeded from the last observed target values, and MSE/R² compare the
    resulting predictions against the held-out targets.
    """
    if not samples:
        raise ValueError(f"cannot evaluate on an empty {split_name!r} "
                         "sample list")
    tic = time.perf_counter()
    xs, teach, ys = _stack_samples(samples)
    preds = _predict_ar(model, xs, teach, batch_size)

    mse = float(np.mean((preds - ys) ** 2))
    mse_per, r2_per, defined = {}, {}, {}
    preds_phys = stats.denormalize_targets(preds)
    ys_phys = stats.denormalize_targets(ys)
    for j, name in enumerate(target_names):
        mse_per[name] = float(np.mean((preds[..., j] - ys[..., j]) ** 2))
        r2 = r_squared(preds_phys[..., j], ys_phys[..., j])
        r2_per[name] = r2
        defined[name] = not math.isnan(r2)
    return EvalReport(
        split=split_name,
        kind=model.spec.kind,
        window=model.spec.window,
        horizon=model.spec.horizon,
        param_count=model.count_parameters(),
        n_samples=len(samples),
        mse=mse,
        mse_per_target=mse_per,
        r2_per_target=r2_per,
        r2_defined=defined,
        r2_pooled=r_squared(preds, ys),
        wall_clock_seconds=time.perf_counter() - tic,
    )


# ------------------------------------------------------------- grid runner

# the reference ranking reported for the original dataset, best to worst
REFERENCE_RANKING = ("v_tst", "lstm", "tst_lstm", "enc_tst",
                     "enc_tst_dec_lstm")


@dataclass
class GridCell:
    kind: str
    window: int
    horizon: int
    status: str = "ok"            # or "failed"
    error: str = ""
    param_count: int = 0
    train_mse: float = float("nan")
    val_mse: float = float("nan")
    test_mse: float = float("nan")
    test_r2_pooled: float = float("nan")
    test_r2_per_target: dict = field(default_factory=dict)
    epochs_run: int = 0
    seconds: float = 0.0

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "kind": self.kind, "window": self.window, "horizon": self.horizon,
            "status": self.status, "error": self.error,
            "param_count": self.param_count,
            "train_mse": self.train_mse, "val_mse": self.val_mse,
            "test_mse": self.test_mse,
            "test_r2_pooled": self.test_r2_pooled,
            "test_r2_per_target": dict(self.test_r2_per_target),
            "epochs_run": self.epochs_run,
        }
        if include_timing:
            d["seconds"] = self.seconds
        return d


@dataclass
class GridReport:
    kinds: list
    cases: list                   # list of (window, horizon)
    cells: list                   # list of GridCell
    annotations: list

    def cell(self, kind: str, case) -> GridCell:
        for c in self.cells:
            if c.kind == kind and (c.window, c.horizon) == tuple(case):
                return c
        raise KeyError(f"no grid cell for {kind} at {case}")

    def to_dict(self, include_timing: bool = True) -> dict:
        return {
            "version": GRID_REPORT_VERSION,
            "kinds": list(self.kinds),
            "cases": [list(c) for c in self.cases],
            "cells": [c.to_dict(include_timing) for c in self.cells],
            "annotations": list(self.annotations),
        }

    def format_table(self) -> str:
        """Aligned text table: per case, error rows and test R² per model."""
        col_w = max(len(k) for k in self.kinds) + 2
        label_w = 22
        lines = []
        header = " " * label_w + "".join(f"{k:>{col_w}}" for k in self.kinds)
        for case in self.cases:
            lines.append(f"Case W={case[0]}, H={case[1]}")
            lines.append(header)
            rows = [
                ("Params", lambda c: f"{c.param_count:,}"),
                ("Training error", lambda c: _fmt(c.train_mse)),
                ("Validation error", lambda c: _fmt(c.val_mse)),
                ("Testing error", lambda c: _fmt(c.test_mse)),
                ("R² (test)", lambda c: _fmt(c.test_r2_pooled)),
            ]
            for label, getter in rows:
                cells = []
                for kind in self.kinds:
                    c = self.cell(kind, case)
                    cells.append(getter(c) if c.status == "ok" else "failed")
                lines.append(f"{label:<{label_w}}"
                             + "".join(f"{v:>{col_w}}" for v in cells))
            lines.append("")
        if self.annotations:
            lines.append("Annotations (non-binding observations):")
            for a in self.annotations:
                lines.append(f"  - {a}")
            lines.append("")
        lines.append("Errors are MSE in normalized target units; R² is pooled "
                      "over targets.")
        return "\n".join(lines)


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.4f}"


def _grid_annotations(report: GridReport) -> list:
    notes = []
    # horizon-matched window comparison across all kinds
    by_h = {}
    for w, h in report.cases:
        by_h.setdefault(h, []).append(w)
    for h, ws in by_h.items():
        if len(ws) < 2:
            continue
        ws = sorted(ws)
        means = {}
        for w in ws:
            vals = [report.cell(k, (w, h)).test_r2_pooled
                    for k in report.kinds
                    if report.cell(k, (w, h)).status == "ok"]
            if vals:
                means[w] = float(np.mean(vals))
        if len(means) < 2:
            continue
        w_lo, w_hi = min(means), max(means)
        trend = "increased" if means[w_hi] > means[w_lo] else "did not increase"
        notes.append(
            f"mean test R² at H={h} {trend} with larger W: "
            + ", ".join(f"W={w}: {means[w]:.4f}" for w in ws if w in means)
            + " (reference behavior: larger W helps; non-binding)"
        )
    # observed ranking vs the reference ranking, per case
    for case in report.cases:
        scored = [(k, report.cell(k, case).test_r2_pooled)
                  for k in report.kinds
                  if report.cell(k, case).status == "ok"
                  and not math.isnan(report.cell(k, case).test_r2_pooled)]
        if len(scored) < 2:
            continue
        observed = [k for k, _ in sorted(scored, key=lambda kv: -kv[1])]
        ref = [k for k in REFERENCE_RANKING if k in dict(scored)]
        agree = "matches" if observed == ref else "differs from"
        notes.append(
            f"W={case[0]}, H={case[1]}: observed ranking "
            + " > ".join(observed)
            + f" {agree} the reference ranking "
            + " > ".join(ref)
            + " (dataset-specific; non-binding)"
        )
    return notes


def run_grid(kinds: list, cases: list, make_dataset, train_cfg: TrainConfig,
             model_fields: dict | None = None, seed: int = 0,
             target_names=("soc", "batt_temp"), on_cell=None) -> GridReport:
    """Train and evaluate every (kind, case) cell with fresh weights.

    ``make_dataset(window, horizon)`` supplies the DatasetSplit for a case.
    Cell failures are caught and marked; surviving cells still run. Every
    cell's randomness is derived from ``seed`` and the cell coordinates, so
    reruns reproduce the whole grid.
    """
    model_fields = dict(model_fields or {})
    report = GridReport(kinds=list(kinds),
                        cases=[tuple(c) for c in cases],
                        cells=[], annotations=[])
    datasets = {}
    for ci, case in enumerate(report.cases):
        w, h = case
        try:
            datasets[case] = make_dataset(w, h)
        except Exception as exc:          # noqa: BLE001 - isolate cell failures
            datasets[case] = exc
        for ki, kind in enumerate(kinds):
            cell = GridCell(kind=kind, window=w, horizon=h)
            tic = time.perf_counter()
            try:
                ds = datasets[case]
                if isinstance(ds, Exception):
                    raise RuntimeError(f"dataset build failed: {ds}") from ds
                build_seed, train_seed = (
                    int(s) for s in np.random.SeedSequence(
                        (seed, ci, ki)).generate_state(2)
                )
                spec = ModelSpec(kind=kind, window=w, horizon=h,
                                 **model_fields)
                model = build(spec, seed=build_seed)
                cfg = TrainConfig(**{**train_cfg.__dict__,
                                     "seed": train_seed})
                model, log = train(model, ds, cfg)
                cell.param_count = model.count_parameters()
                cell.epochs_run = len(log.entries)
                rep_tr = evaluate(model, ds.train, ds.stats, target_names,
                                  "train", train_cfg.batch_size)
                rep_va = evaluate(model, ds.validation, ds.stats,
                                  target_names, "validation",
                                  train_cfg.batch_size)
                rep_te = evaluate(model, ds.test, ds.stats, target_names,
                                  "test", train_cfg.batch_size)
                cell.train_mse = rep_tr.mse
                cell.val_mse = rep_va.mse
                cell.test_mse = rep_te.mse
                cell.test_r2_pooled = rep_te.r2_pooled
                cell.test_r2_per_target = rep_te.r2_per_target
            except Exception as exc:      # noqa: BLE001 - isolate cell failures
                cell.status = "failed"
                cell.error = f"{type(exc).__name__}: {exc}"
            cell.seconds = time.perf_counter() - tic
            report.cells.append(cell)
            if on_cell is not None:
                on_cell(cell)
    report.annotations = _grid_annotations(report)
    return report
