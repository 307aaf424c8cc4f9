"""Cross-validation training: fold assignment, the epoch loop, and
best-validation-dice checkpoint selection.

Every random draw comes from a stream seeded by (master seed, fold, epoch,
step), so runs are bit-reproducible regardless of how folds are scheduled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import engine
from .checkpoint import Checkpoint
from .engine.tensor import Tensor
from .inference import sliding_window_predict, argmax_labels
from .losses import combined_loss
from .metrics import DiceResult, dice_result_from_scores, dice_score
from .models import ArchitectureSpec, build_model
from .optim import AdamW, lr_at_epoch
from .preproc import (
    build_training_sample,
    downscale_labels_xy,
    downscale_xy,
    multi_window_stack,
    resolve_windows,
    sample_augmentation_params,
)
from .volume import (
    IGNORE_LABEL,
    REPORT_CLASS_ORDER,
    HUVolume,
    LabelVolume,
    assert_paired,
    load_volume,
)


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; aborting beats silently skipping steps."""


@dataclass(frozen=True)
class Case:
    case_id: str
    hu: HUVolume
    labels: LabelVolume

    def __post_init__(self):
        assert_paired(self.hu, self.labels)


def load_cases(data_dir) -> list[Case]:
    """Read `<id>_hu.vbc` / `<id>_label.vbc` pairs from a directory."""
    data_dir = Path(data_dir)
    cases = []
    for hu_path in sorted(data_dir.glob("*_hu.vbc")):
        case_id = hu_path.name[: -len("_hu.vbc")]
        lab_path = data_dir / f"{case_id}_label.vbc"
        if not lab_path.exists():
            raise FileNotFoundError(f"missing label volume for case {case_id}: {lab_path}")
        cases.append(Case(case_id, load_volume(hu_path), load_volume(lab_path)))
    if not cases:
        raise FileNotFoundError(f"no *_hu.vbc cases found in {data_dir}")
    return cases


@dataclass
class TrainConfig:
    arch: ArchitectureSpec = field(default_factory=lambda: ArchitectureSpec("multires_unet3d"))
    epochs: int = 200
    folds: int = 5
    seed: int = 0
    lr_initial: float = 1e-4
    lr_factor: float = 0.95
    lr_interval: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7
    weight_decay: float = 1e-4
    windows: object = "multi"
    crop: tuple = (32, 256, 256)
    downscale: int = 2
    augment_scale: bool = True
    augment_flip: bool = True
    scale_range: tuple = (0.8, 1.2)
    flip_prob: float = 0.5
    overlap: float = 0.75
    val_interval: int = 1
    steps_per_epoch: int | None = None  # default: one crop per training case

    def __post_init__(self):
        if isinstance(self.arch, dict):
            self.arch = ArchitectureSpec.from_dict(self.arch)
        self.crop = tuple(int(c) for c in self.crop)
        self.scale_range = tuple(float(s) for s in self.scale_range)
        if self.epochs < 1 or self.folds < 1 or self.val_interval < 1:
            raise ValueError("epochs, folds and val_interval must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crop"] = list(self.crop)
        d["scale_range"] = list(self.scale_range)
        if not isinstance(self.windows, str):
            d["windows"] = [list(map(float, w)) for w in self.windows]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class FoldAssignment:
    folds: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        flat = [c for fold in self.folds for c in fold]
        if len(flat) != len(set(flat)):
            raise ValueError("fold assignment is not disjoint")
        sizes = [len(f) for f in self.folds]
        if max(sizes) - min(sizes) > 1:
            raise ValueError(f"fold sizes differ by more than 1: {sizes}")


def make_cv_folds(case_ids, k: int, seed: int) -> FoldAssignment:
    """Deterministic shuffle then round-robin assignment into k folds."""
    ids = list(case_ids)
    if k < 1 or k > len(ids):
        raise ValueError(f"k={k} incompatible with {len(ids)} cases")
    order = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D])).permutation(len(ids))
    folds = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(ids[idx])
    return FoldAssignment(tuple(tuple(f) for f in folds))


def _stream(*parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))


def _prepare_case(case: Case, cfg: TrainConfig):
    hu = downscale_xy(case.hu, cfg.downscale)
    lab = downscale_labels_xy(case.labels, cfg.downscale)
    return hu, lab


def evaluate_val_dice(model, prepared_cases, cfg: TrainConfig) -> DiceResult:
    """Sliding-window predictions vs (possibly sparse) annotations, dice per
    foreground class averaged over cases."""
    per_class = {c: [] for c in REPORT_CLASS_ORDER}
    for hu, lab in prepared_cases:
        x = multi_window_stack(hu, cfg.windows)
        probs = sliding_window_predict(model, x, window=cfg.crop[0], overlap=cfg.overlap)
        pred = argmax_labels(probs, hu.spacing)
        for c in REPORT_CLASS_ORDER:
            per_class[c].append(dice_score(pred.data, lab.data, int(c)))
    return dice_result_from_scores({c: float(np.mean(v)) for c, v in per_class.items()})


def _sample_crop(img, lab, cfg, windows, rng):
    """Draw augmentation params until the crop holds annotated voxels (sparse
    annotations can yield all-ignore crops); gives up after 20 attempts."""
    for _ in range(20):
        params = sample_augmentation_params(
            rng,
            img.shape,
            cfg.crop,
            cfg.scale_range,
            cfg.flip_prob,
            enable_scale=cfg.augment_scale,
            enable_flip=cfg.augment_flip,
        )
        x, y = build_training_sample(img, lab, params, windows, cfg.crop)
        if (y != IGNORE_LABEL).any():
            return x, y
    return None


def train_fold(cfg: TrainConfig, cases: list[Case], fold_index: int) -> Checkpoint:
    """Train one cross-validation member; returns the best-validation-dice
    checkpoint with the full training curve attached."""
    ids = [c.case_id for c in cases]
    assignment = make_cv_folds(ids, cfg.folds, cfg.seed)
    val_ids = set(assignment.folds[fold_index])
    train_cases = [c for c in cases if c.case_id not in val_ids]
    val_cases = [c for c in cases if c.case_id in val_ids]
    if not train_cases:
        raise ValueError(f"fold {fold_index} leaves an empty training split")

    prep_train = [_prepare_case(c, cfg) for c in train_cases]
    prep_val = [_prepare_case(c, cfg) for c in val_cases]
    windows = resolve_windows(cfg.windows)

    model = build_model(cfg.arch, seed=_stream(cfg.seed, fold_index, 0x1417))
    opt = AdamW(
        model.parameters(),
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )

    steps = cfg.steps_per_epoch or len(prep_train)
    best_dice, best_epoch, best_state = -1.0, -1, None
    val_history: list[tuple[int, float]] = []
    curve: list[dict] = []

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg.lr_initial, cfg.lr_factor, cfg.lr_interval)
        order = _stream(cfg.seed, fold_index, epoch, 0x0BDE).permutation(len(prep_train))
        losses = []
        for step in range(steps):
            hu, lab = prep_train[order[step % len(prep_train)]]
            rng = _stream(cfg.seed, fold_index, epoch, step, 0x5A3)
            sample = _sample_crop(hu.data, lab.data, cfg, windows, rng)
            if sample is None:
                continue
            x, y = sample
            logits = model.forward(Tensor(x))
            probs = engine.ops.softmax_channels(logits)
            lv = combined_loss(probs, y)
            if not np.isfinite(lv.combined):
                raise TrainingDiverged(
                    f"non-finite loss at fold {fold_index} epoch {epoch} step {step}"
                )
            lv.node.backward()
            opt.step(lr)
            losses.append(lv.combined)

        row = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)) if losses else None}
        if (epoch + 1) % cfg.val_interval == 0 or epoch == cfg.epochs - 1:
            result = evaluate_val_dice(model, prep_val, cfg) if prep_val else None
            if result is not None:
                val_history.append((epoch, result.mean))
                row["val_dice"] = list(result.report_row())
                if result.mean > best_dice:
                    best_dice = result.mean
                    best_epoch = epoch
                    best_state = {k: v.copy() for k, v in model.state().items()}
        curve.append(row)

    if best_state is None:  # no validation cases: keep the final weights
        best_state = {k: v.copy() for k, v in model.state().items()}
        best_epoch, best_dice = cfg.epochs - 1, float("nan")

    return Checkpoint(
        arch=cfg.arch,
        state=best_state,
        epoch=best_epoch,
        val_dice=best_dice,
        fold_index=fold_index,
        config=cfg.to_dict(),
        val_history=val_history,
        curve=curve,
    )


def train_ensemble(cfg: TrainConfig, cases: list[Case]) -> list[Checkpoint]:
    """One checkpoint per fold; fold streams derive from the master seed."""
    return [train_fold(cfg, cases, fold) for fold in range(cfg.folds)]
