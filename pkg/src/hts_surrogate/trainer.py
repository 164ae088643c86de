"""Mini-batch training with dual-loss checkpointing, and architecture sweeps."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autonet
from .autonet import AdamState, NetworkArch

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e3
NONCONVERGENCE_LOSS = 1e-2


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainHyper:
    batch_size_train: int = 4096
    batch_size_val: int = 8192
    max_epochs: int = 500
    seed: int = 0
    shuffle: bool = True
    base_lr: float = 5e-4
    lr_factor: float = 0.6
    lr_period: int = 50
    # full forward pass over the training rows after each epoch's updates
    eval_train: bool = True

    def __post_init__(self):
        if self.batch_size_train < 1 or self.batch_size_val < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def lr(self, epoch):
        return autonet.lr_schedule(epoch, self.base_lr, self.lr_factor, self.lr_period)


@dataclass
class TrainData:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray

    @classmethod
    def from_rows(cls, train_rows, val_rows):
        train_rows = np.asarray(train_rows, dtype=np.float64)
        val_rows = np.asarray(val_rows, dtype=np.float64)
        return cls(train_rows[:, :6], train_rows[:, 6:7], val_rows[:, :6], val_rows[:, 6:7])


@dataclass
class Model:
    arch: NetworkArch
    params: list
    opt: AdamState = None

    @classmethod
    def fresh(cls, arch: NetworkArch, seed):
        params = autonet.init_params(arch, seed)
        return cls(arch, params, AdamState.zeros_like(params))


@dataclass
class TrainedModel:
    arch: NetworkArch
    params: list
    epoch: int
    train_loss: float
    val_loss: float
    train_eval_loss: float = math.nan

    def predict(self, X, batch_size=8192, dtype=np.float64):
        return autonet.predict(self.arch, self.params, X, batch_size, dtype)

    def save(self, path):
        autonet.save_params(self.arch, self.params, path,
                            extra={"epoch": self.epoch, "train_loss": self.train_loss,
                                   "val_loss": self.val_loss, "train_eval_loss": self.train_eval_loss})

    @classmethod
    def load(cls, path, expected_arch=None):
        arch, params = autonet.load_params(path, expected_arch)
        extra = autonet.read_checkpoint_header(path).get("extra", {})
        return cls(arch, params, extra.get("epoch", -1),
                   extra.get("train_loss", math.nan), extra.get("val_loss", math.nan),
                   extra.get("train_eval_loss", math.nan))


@dataclass
class TrainRun:
    arch: dict
    seed: int
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_eval_loss: list = field(default_factory=list)
    saved_epochs: list = field(default_factory=list)
    best_train: float = math.inf
    best_val: float = math.inf
    epoch_time: list = field(default_factory=list)
    status: str = "ok"      # ok | diverged | no_checkpoint
    message: str = ""

    def to_dict(self):
        return asdict(self)

    def write(self, directory, stem="run"):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, f"{stem}.json"), "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2)
        with open(os.path.join(directory, f"{stem}_loss.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            # wall times live in the JSON only, so the curve is reproducible byte for byte
            w.writerow(["epoch", "train_loss", "val_loss", "train_eval_loss", "saved"])
            saved = set(self.saved_epochs)
            for e, (tl, vl) in enumerate(zip(self.train_loss, self.val_loss)):
                te = self.train_eval_loss[e] if e < len(self.train_eval_loss) else ""
                w.writerow([e, repr(tl), repr(vl), repr(te) if te != "" else "",
                            int(e in saved)])


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def weighted_loss(arch, params, X, y, batch_size):
    """Size-weighted mean of per-batch MSE, i.e. the MSE over all rows."""
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty split")
    total = 0.0
    for i in range(0, n, batch_size):
        out, _ = autonet.forward(arch, params, X[i:i + batch_size], keep_cache=False)
        loss, _ = autonet.mse(out, y[i:i + batch_size])
        total += loss * out.shape[0]
    return total / n


def shuffle_rng(seed):
    # separate stream from parameter initialization ([seed, 0])
    return np.random.default_rng([int(seed), 1])


def epoch(model: Model, data: TrainData, hyper: TrainHyper, epoch_index: int, rng=None):
    """One pass over the training rows; returns (train_loss, val_loss).

    The model is updated in place (params and optimizer state replaced).
    """
    n = data.X_train.shape[0]
    order = rng.permutation(n) if (hyper.shuffle and rng is not None) else np.arange(n)
    lr = hyper.lr(epoch_index)
    params, opt = model.params, model.opt
    total = 0.0
    for i in range(0, n, hyper.batch_size_train):
        idx = order[i:i + hyper.batch_size_train]
        out, cache = autonet.forward(model.arch, params, data.X_train[idx])
        loss, grad = autonet.mse(out, data.y_train[idx])
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch_index}, batch {i // hyper.batch_size_train}")
        grads = autonet.backward(model.arch, params, cache, grad)
        params, opt = autonet.adam_update(params, grads, opt, lr)
        total += loss * idx.size
    model.params, model.opt = params, opt
    train_loss = total / n
    val_loss = weighted_loss(model.arch, params, data.X_val, data.y_val, hyper.batch_size_val)
    return train_loss, val_loss


def checkpoint_rule(train_loss, val_loss, best_train, best_val) -> bool:
    return train_loss < best_train and val_loss < best_val


def train(data: TrainData, arch: NetworkArch, hyper: TrainHyper, model: Model = None,
          checkpoint_dir=None, progress=None):
    """Train up to ``hyper.max_epochs``; return (TrainedModel or None, TrainRun).

    The returned model is the last checkpoint saved under the dual-loss rule.
    """
    model = Model.fresh(arch, hyper.seed) if model is None else model
    if model.opt is None:
        model.opt = AdamState.zeros_like(model.params)
    rng = shuffle_rng(hyper.seed)
    run = TrainRun(arch=arch.to_dict(), seed=hyper.seed)
    best = None
    initial = None
    min_train = min_val = math.inf
    for e in range(hyper.max_epochs):
        t0 = time.perf_counter()
        try:
            tl, vl = epoch(model, data, hyper, e, rng)
        except (TrainingError, FloatingPointError) as exc:
            run.status, run.message = "diverged", str(exc)
            log.warning("%s seed %d: %s", arch.label, hyper.seed, exc)
            break
        te = weighted_loss(arch, model.params, data.X_train, data.y_train,
                           hyper.batch_size_val) if hyper.eval_train else math.nan
        run.epoch_time.append(time.perf_counter() - t0)
        run.train_loss.append(tl)
        run.val_loss.append(vl)
        run.train_eval_loss.append(te)
        if progress is not None:
            progress(e, tl, vl)
        if not (math.isfinite(tl) and math.isfinite(vl)):
            run.status, run.message = "diverged", f"non-finite loss at epoch {e}"
            break
        if initial is None:
            initial = tl
        elif tl > DIVERGENCE_FACTOR * initial:
            run.status = "diverged"
            run.message = f"train loss {tl:.3e} exceeds {DIVERGENCE_FACTOR:g}x initial {initial:.3e} at epoch {e}"
            log.warning("%s seed %d: %s", arch.label, hyper.seed, run.message)
            break
        # minima run over every prior epoch, saved or not
        if checkpoint_rule(tl, vl, min_train, min_val):
            run.best_train, run.best_val = tl, vl
            run.saved_epochs.append(e)
            best = TrainedModel(arch, model.params, e, tl, vl, te)
        min_train, min_val = min(min_train, tl), min(min_val, vl)
    if best is None and run.status == "ok":
        run.status, run.message = "no_checkpoint", "no epoch improved both losses"
    if best is not None and checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        best.save(os.path.join(checkpoint_dir, checkpoint_name(arch, hyper.seed, best.epoch)))
    return best, run


def checkpoint_name(arch: NetworkArch, seed, epoch_index):
    return f"{arch.label}_seed{seed}_epoch{epoch_index:04d}.sfnn"


# --------------------------------------------------------------------------
# sweeps

@dataclass
class SweepRow:
    arch: dict
    label: str
    seeds: list
    final_train: list
    final_val: list
    mean_train: float
    var_train: float
    mean_val: float
    var_val: float
    mean_epoch_time: float
    failed_seeds: list
    nonconverged: bool


@dataclass
class SweepReport:
    rows: list
    runs: list

    def to_dict(self):
        return {"rows": [asdict(r) for r in self.rows], "runs": [r.to_dict() for r in self.runs]}

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "sweep.json"), "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2)
        with open(os.path.join(directory, "sweep.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "mean_train", "var_train", "mean_val", "var_val",
                        "mean_epoch_time", "nonconverged"])
            for r in self.rows:
                w.writerow([r.label, repr(r.mean_train), repr(r.var_train), repr(r.mean_val),
                            repr(r.var_val), repr(r.mean_epoch_time), int(r.nonconverged)])


def _train_one(args):
    data, arch, hyper, checkpoint_dir = args
    best, run = train(data, arch, hyper, checkpoint_dir=checkpoint_dir)
    return best, run


def run_sweep(data: TrainData, archs, seeds, hyper: TrainHyper, checkpoint_dir=None, jobs=1):
    """Train every (arch, seed) pair and aggregate final losses per arch."""
    archs, seeds = list(archs), list(seeds)
    if not archs or not seeds:
        raise ValueError("a sweep needs at least one architecture and one seed")
    tasks = []
    for arch in archs:
        for s in seeds:
            h = TrainHyper(**{**asdict(hyper), "seed": s})
            tasks.append((data, arch, h, checkpoint_dir))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_train_one, tasks))
    else:
        results = [_train_one(t) for t in tasks]

    rows, runs = [], []
    for a, arch in enumerate(archs):
        chunk = results[a * len(seeds):(a + 1) * len(seeds)]
        ft, fv, ok_seeds, failed, times = [], [], [], [], []
        for s, (best, run) in zip(seeds, chunk):
            runs.append(run)
            times.extend(run.epoch_time)
            if best is None or run.status == "diverged":
                failed.append(s)
            if best is not None:
                ok_seeds.append(s)
                ft.append(best.train_loss)
                fv.append(best.val_loss)
        last_train = [r.train_loss[-1] for _, r in chunk if r.train_loss]
        rows.append(SweepRow(
            arch=arch.to_dict(), label=arch.label, seeds=ok_seeds, final_train=ft, final_val=fv,
            mean_train=float(np.mean(ft)) if ft else math.nan,
            var_train=float(np.var(ft)) if ft else math.nan,
            mean_val=float(np.mean(fv)) if fv else math.nan,
            var_val=float(np.var(fv)) if fv else math.nan,
            mean_epoch_time=float(np.mean(times)) if times else math.nan,
            failed_seeds=failed,
            nonconverged=bool(failed) or any(l > NONCONVERGENCE_LOSS for l in last_train),
        ))
    return SweepReport(rows, runs)
