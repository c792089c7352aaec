"""Training loop: KL loss on fractional labels, cosine or constant schedule,
early stopping, stratified k-fold cross-validation.

Determinism contract: every stochastic choice (fold assignment, model init,
batch shuffling, dropout) draws from a seed derived by hashing the
experiment seed together with a role tag, so reruns reproduce results
exactly and parallel workers agree with serial execution.
"""

from __future__ import annotations

import hashlib
import logging
import resource
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import NormalizationScheme
from .errors import ConfigError, DataError, ParameterError, TrainingError
from .models import build_model, count_parameters, model_spec

logger = logging.getLogger(__name__)

# Published per-family defaults: learning rate, weight decay, schedule.
TABLE_DEFAULTS = {
    "cnn": (0.0005, 0.0002, "constant"),
    "unet": (0.0005, 0.0001, "cosine"),
    "vit": (0.0001, 0.0003, "cosine"),
    "mdn": (0.0010, 0.0001, "cosine"),
}

SCHEDULES = ("constant", "cosine")

MAX_EPOCHS = 150
PATIENCE = 10
MIN_DELTA = 1e-6
BATCH_SIZE = 128
FOLDS = 10

# AdamW internals, fixed for every family and recorded in run provenance.
ADAMW_BETAS = (0.9, 0.999)
ADAMW_EPS = 1e-8

_ROW_SUM_TOL = 1e-4
_PRED_FLOOR = 1e-8


@dataclass
class TrainConfig:
    family: str
    learning_rate: float
    weight_decay: float
    scheduler: str
    max_epochs: int = MAX_EPOCHS
    patience: int = PATIENCE
    batch_size: int = BATCH_SIZE
    folds: int = FOLDS
    dropout: float | None = None
    normalization: NormalizationScheme = NormalizationScheme.MIN_MAX
    budget_fraction: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        errors = []
        if self.family not in TABLE_DEFAULTS:
            errors.append(f"family must be one of {list(TABLE_DEFAULTS)}, got {self.family!r}")
        if not self.learning_rate > 0:
            errors.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            errors.append(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.scheduler not in SCHEDULES:
            errors.append(f"scheduler must be one of {list(SCHEDULES)}, got {self.scheduler!r}")
        if self.max_epochs < 1:
            errors.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0 <= self.patience < self.max_epochs:
            errors.append(
                f"patience must lie in [0, max_epochs), got {self.patience}"
            )
        if self.batch_size < 1:
            errors.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.folds < 2:
            errors.append(f"folds must be >= 2, got {self.folds}")
        if errors:
            raise ConfigError(errors)


def default_train_config(family: str, **overrides) -> TrainConfig:
    """Per-family defaults; keyword overrides replace individual fields."""
    if family not in TABLE_DEFAULTS:
        raise ConfigError([f"unknown family {family!r}"])
    lr, wd, sched = TABLE_DEFAULTS[family]
    cfg = TrainConfig(family=family, learning_rate=lr, weight_decay=wd, scheduler=sched)
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError([f"unknown training option {key!r}"])
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def derive_seed(base: int, tag) -> int:
    """Stable 32-bit seed from a base seed and a role tag."""
    digest = hashlib.sha256(f"{base}:{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


# ---------------------------------------------------------------------------
# Loss and schedule
# ---------------------------------------------------------------------------


def _check_rows(name: str, rows) -> None:
    if isinstance(rows, torch.Tensor):
        sums = rows.detach().sum(dim=1)
        bad = torch.nonzero(torch.abs(sums - 1.0) > _ROW_SUM_TOL)
        if bad.numel():
            i = int(bad[0, 0])
            raise DataError(
                f"{name} row {i} sums to {float(sums[i]):.6f}, expected 1 within {_ROW_SUM_TOL}"
            )
    else:
        sums = np.asarray(rows, dtype=np.float64).sum(axis=1)
        bad = np.nonzero(np.abs(sums - 1.0) > _ROW_SUM_TOL)[0]
        if bad.size:
            raise DataError(
                f"{name} row {bad[0]} sums to {sums[bad[0]]:.6f}, "
                f"expected 1 within {_ROW_SUM_TOL}"
            )


def kl_loss(pred, target):
    """Mean KL divergence KL(target || pred) over batch rows.

    Zero target components contribute zero; predictions are floored at 1e-8
    inside the log. Accepts torch tensors (differentiable result) or numpy
    arrays (returns a float). Rows of both arguments must sum to 1 within
    1e-4.
    """
    tensors = isinstance(pred, torch.Tensor)
    if tensors:
        p, t = pred, target.to(pred.dtype)
    else:
        p = torch.as_tensor(np.asarray(pred, dtype=np.float64))
        t = torch.as_tensor(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape or p.ndim != 2:
        raise DataError(f"pred shape {tuple(p.shape)} != target shape {tuple(t.shape)}")
    _check_rows("pred", p)
    _check_rows("target", t)
    q = torch.clamp(p, min=_PRED_FLOOR)
    t_safe = torch.where(t > 0, t, torch.ones_like(t))
    terms = torch.where(t > 0, t * (torch.log(t_safe) - torch.log(q)), torch.zeros_like(t))
    loss = terms.sum(dim=1).mean()
    return loss if tensors else float(loss)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Learning rate at schedule step `epoch` (0-based; epoch e of training
    uses lr_at(e - 1))."""
    total = config.max_epochs
    if not 0 <= epoch <= total:
        raise ParameterError(f"epoch {epoch} outside schedule range [0, {total}]")
    if config.scheduler == "constant":
        return config.learning_rate
    # cosine annealing to zero over max_epochs
    return float(0.5 * config.learning_rate * (1.0 + np.cos(np.pi * epoch / total)))


# ---------------------------------------------------------------------------
# Folds and early stopping
# ---------------------------------------------------------------------------


def stratified_folds(labels, k: int, seed: int) -> list[np.ndarray]:
    """Partition sample indices into k folds stratified by dominant class.

    The dominant class of a fractional label is its argmax (ties resolve to
    the lowest index). Within each class the members are shuffled with a
    seeded generator and dealt round-robin, so per-fold class counts differ
    by at most one. A class with fewer members than k cannot reach every
    fold; it is still dealt (warning logged).
    """
    arr = np.asarray([lab.p if hasattr(lab, "p") else lab for lab in labels], dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"labels must be a sequence of vectors, got shape {arr.shape}")
    n = arr.shape[0]
    if k < 2:
        raise ParameterError(f"fold count must be >= 2, got {k}")
    if n < k:
        raise ParameterError(f"{n} samples cannot fill {k} folds")
    keys = np.argmax(arr, axis=1)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for cls in range(arr.shape[1]):
        members = np.nonzero(keys == cls)[0]
        if members.size == 0:
            continue
        if members.size < k:
            logger.warning(
                "class %d has %d members, fewer than %d folds; "
                "stratification for this class is degraded",
                cls, members.size, k,
            )
        members = members[rng.permutation(members.size)]
        for idx in members:
            folds[cursor % k].append(int(idx))
            cursor += 1
    return [np.asarray(sorted(f), dtype=np.int64) for f in folds]


class EarlyStopping:
    """Stop when validation loss has not improved by MIN_DELTA for
    `patience` consecutive epochs."""

    def __init__(self, patience: int = PATIENCE, min_delta: float = MIN_DELTA):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = float("inf")
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch's validation loss; True means halt now."""
        if val_loss < self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


# ---------------------------------------------------------------------------
# Fold training
# ---------------------------------------------------------------------------


@dataclass
class FoldData:
    """Normalized arrays for one fold: train inputs/targets, val inputs/targets."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray

    def validate(self) -> None:
        if len(self.train_x) != len(self.train_y) or len(self.val_x) != len(self.val_y):
            raise DataError("inputs and targets must have matching lengths")
        if len(self.train_x) == 0 or len(self.val_x) == 0:
            raise DataError("train and val splits must be non-empty")


@dataclass
class FoldResult:
    fold_index: int
    best_epoch: int
    epochs_run: int
    best_val_loss: float
    train_losses: list[float]
    val_losses: list[float]
    lrs: list[float]
    wall_clock_s: float
    peak_memory_bytes: int
    parameter_count: int
    best_state: dict = field(default=None, repr=False)
    checkpoint_path: str | None = None


def _peak_memory_bytes() -> int:
    # ru_maxrss is reported in kilobytes on Linux.
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def _batched_val_loss(model, x: torch.Tensor, y: torch.Tensor, batch: int) -> float:
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(x), batch):
            xb, yb = x[start : start + batch], y[start : start + batch]
            total += float(kl_loss(model(xb), yb)) * len(xb)
    return total / len(x)


def train_one_fold(model_seed: int, fold_data: FoldData, config: TrainConfig) -> FoldResult:
    """Train one model on one fold's split; returns curves and best weights.

    The best epoch is the one with the lowest validation loss; its weights
    are restored into `best_state`. A non-finite training loss aborts with
    the epoch, batch index and learning rate in the error.
    """
    config.validate()
    fold_data.validate()
    start = time.perf_counter()

    spec = model_spec(config.family, config.dropout)
    model = build_model(spec, model_seed)
    torch.manual_seed(derive_seed(model_seed, "dropout"))
    shuffle_rng = np.random.Generator(np.random.PCG64(derive_seed(model_seed, "shuffle")))

    x_train = torch.as_tensor(fold_data.train_x, dtype=torch.float32).unsqueeze(1)
    y_train = torch.as_tensor(fold_data.train_y, dtype=torch.float32)
    x_val = torch.as_tensor(fold_data.val_x, dtype=torch.float32).unsqueeze(1)
    y_val = torch.as_tensor(fold_data.val_y, dtype=torch.float32)

    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=ADAMW_BETAS,
        eps=ADAMW_EPS,
        weight_decay=config.weight_decay,
    )
    stopper = EarlyStopping(patience=config.patience)
    train_losses: list[float] = []
    val_losses: list[float] = []
    lrs: list[float] = []
    best_state: dict = {}
    epochs_run = 0

    for epoch in range(1, config.max_epochs + 1):
        lr = lr_at(epoch - 1, config)
        for group in optimizer.param_groups:
            group["lr"] = lr

        model.train()
        order = shuffle_rng.permutation(len(x_train))
        epoch_loss = 0.0
        for bi, bstart in enumerate(range(0, len(order), config.batch_size)):
            idx = torch.as_tensor(order[bstart : bstart + config.batch_size])
            pred = model(x_train[idx])
            loss = kl_loss(pred, y_train[idx])
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch}, batch {bi}, lr {lr:.3e}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(idx)

        model.eval()
        val_loss = _batched_val_loss(model, x_val, y_val, config.batch_size)
        train_losses.append(epoch_loss / len(order))
        val_losses.append(val_loss)
        lrs.append(lr)
        epochs_run = epoch

        improved = val_loss < stopper.best_loss - stopper.min_delta
        should_stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if should_stop:
            break

    if not best_state:
        # no epoch improved on +inf is impossible for finite losses, but a
        # fold stopped on its first epoch still needs weights to report
        best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    model.load_state_dict(best_state)

    return FoldResult(
        fold_index=-1,
        best_epoch=stopper.best_epoch,
        epochs_run=epochs_run,
        best_val_loss=stopper.best_loss,
        train_losses=train_losses,
        val_losses=val_losses,
        lrs=lrs,
        wall_clock_s=time.perf_counter() - start,
        peak_memory_bytes=_peak_memory_bytes(),
        parameter_count=count_parameters(model),
        best_state=best_state,
    )


@dataclass
class FoldPlan:
    """One fold's deterministic ingredients: its model seed and index split."""

    fold_index: int
    model_seed: int
    train_idx: np.ndarray
    val_idx: np.ndarray


def fold_plan(pool_y: np.ndarray, config: TrainConfig) -> list[FoldPlan]:
    """Deterministic fold layout: stratified validation folds and per-fold
    model seeds, both derived from config.seed."""
    folds = stratified_folds(pool_y, config.folds, seed=derive_seed(config.seed, "folds"))
    all_idx = np.arange(len(pool_y))
    return [
        FoldPlan(
            fold_index=k,
            model_seed=derive_seed(config.seed, k),
            train_idx=np.setdiff1d(all_idx, val_idx),
            val_idx=val_idx,
        )
        for k, val_idx in enumerate(folds)
    ]


def cross_validate(pool_x: np.ndarray, pool_y: np.ndarray, config: TrainConfig) -> list[FoldResult]:
    """k-fold cross-validation over a normalized pool; fold k validates on
    stratified fold k and trains on the rest. Model seeds derive from
    (config.seed, fold index)."""
    config.validate()
    results = []
    for plan in fold_plan(pool_y, config):
        fold_data = FoldData(
            train_x=pool_x[plan.train_idx],
            train_y=pool_y[plan.train_idx],
            val_x=pool_x[plan.val_idx],
            val_y=pool_y[plan.val_idx],
        )
        try:
            result = train_one_fold(plan.model_seed, fold_data, config)
        except TrainingError as exc:
            raise TrainingError(f"fold {plan.fold_index}: {exc}") from exc
        result.fold_index = plan.fold_index
        results.append(result)
        logger.info(
            "fold %d/%d: best epoch %d of %d, val loss %.5f",
            plan.fold_index + 1, config.folds,
            result.best_epoch, result.epochs_run, result.best_val_loss,
        )
    return results
