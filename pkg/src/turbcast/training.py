"""Training engine: detector pretraining, semi-supervised co-training with
dual label guessing, and two baselines sharing the same loop.

Modes:

* ``t2net``: pretrain the cube detector on (forecast features, labels), then
  co-train. Per batch the forecaster and detector both run forward; guessed
  soft labels and their quality weights come from the dual ensemble; the
  forecaster minimizes focal loss on labeled cells plus weighted L2 to the
  guesses on unlabeled cells; the detector takes its own supervised focal
  step on the same batch.
* ``supervised``: forecaster alone on labeled cells (the unsupervised weight
  is forced to 0, no detector is built).
* ``hard_pseudo``: forecaster alone; unlabeled cells whose own prediction
  exceeds a confidence threshold get its argmax as a one-hot target under
  cross entropy, weighted by the unsupervised weight.

Epoch records go to a JSON-lines log; checkpoints land in directories per
``checkpoint.py`` and restore bit-identical continuation (parameters,
optimizer moments, shuffle and guessing RNG streams).
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import LoadedDataset, stack_split
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    NumericalError,
    UsageError,
    ValidationError,
)
from .grids import NUM_CLASSES, RegionSpec
from .losses import (
    class_weights,
    combined_loss,
    focal_loss,
    masked_step_mean,
    supervised_loss,
    unsupervised_loss,
)
from .metrics import EvalReport, evaluate
from .models import CubeDetector, SequenceForecaster, detect_sequence
from .pseudolabel import dual_ensemble, mix_threshold

MODES = ("t2net", "supervised", "hard_pseudo")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults follow the reference configuration
    (mix_upper 0.6, ramp 5..15 epochs, sharpen 0.5, unsupervised weight 0.4)."""

    mode: str = "t2net"
    batch_size: int = 8
    tdn_pretrain_epochs: int = 5
    cotrain_epochs: int = 30
    lr_tfn: float = 1e-3
    lr_tdn: float = 1e-3
    optimizer: str = "adam"
    ramp_start: float = 5.0
    ramp_end: float = 15.0
    mix_upper: float = 0.6
    sharpen_temperature: float = 0.5
    unsupervised_weight: float = 0.4
    focal_gamma: float = 2.0
    seed: int = 0
    patience: int = 10
    early_stop_metric: str = "weighted_f1"
    hidden_channels: int = 32
    detector_hidden: int = 32
    kernel_size: tuple[int, int, int] = (3, 3, 3)
    state_activation: str = "tanh"
    decoder_mode: str = "feature_fed"
    smooth_class_counts: bool = True
    pseudo_confidence: float = 0.8

    def __post_init__(self) -> None:
        mode = self.mode.replace("-", "_")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "kernel_size", tuple(int(k) for k in self.kernel_size))
        if mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.tdn_pretrain_epochs < 0 or self.cotrain_epochs < 1:
            raise ConfigurationError("epoch counts must be non-negative (cotrain >= 1)")
        if self.lr_tfn <= 0 or self.lr_tdn <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.ramp_end <= self.ramp_start:
            raise ConfigurationError("ramp_end must exceed ramp_start")
        if not 0.0 <= self.mix_upper <= 1.0:
            raise ConfigurationError("mix_upper must lie in [0,1]")
        if self.sharpen_temperature <= 0:
            raise ConfigurationError("sharpen_temperature must be positive")
        if not 0.0 <= self.unsupervised_weight <= 1.0:
            raise ConfigurationError("unsupervised_weight must lie in [0,1]")
        if self.focal_gamma < 0:
            raise ConfigurationError("focal_gamma must be non-negative")
        if self.patience < 1:
            raise ConfigurationError("patience must be positive")
        if self.early_stop_metric not in ("weighted_f1", "loss"):
            raise ConfigurationError("early_stop_metric must be 'weighted_f1' or 'loss'")
        if self.decoder_mode not in SequenceForecaster.MODES:
            raise ConfigurationError(f"decoder_mode must be one of {SequenceForecaster.MODES}")
        if not 0.0 < self.pseudo_confidence <= 1.0:
            raise ConfigurationError("pseudo_confidence must lie in (0,1]")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["kernel_size"] = list(self.kernel_size)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainResult:
    log: list[dict]
    best_epoch: int
    best_value: float
    stopped_early: bool
    final_checkpoint: Path | None
    best_checkpoint: Path | None


def _tensor_splits(data: LoadedDataset | dict) -> dict[str, dict[str, torch.Tensor]]:
    if isinstance(data, LoadedDataset):
        raw = {name: stack_split(records) for name, records in data.splits.items() if records}
    else:
        raw = data
    out = {}
    for name, arrays in raw.items():
        out[name] = {
            "history": torch.from_numpy(np.ascontiguousarray(arrays["history"], dtype=np.float32)),
            "forecast": torch.from_numpy(np.ascontiguousarray(arrays["forecast"], dtype=np.float32)),
            "labels": torch.from_numpy(np.ascontiguousarray(arrays["labels"], dtype=np.int64)),
        }
        if "truth" in arrays:
            out[name]["truth"] = torch.from_numpy(np.ascontiguousarray(arrays["truth"], dtype=np.int64))
    return out


def _check_finite(name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value).all():
        raise NumericalError(f"{name} became non-finite; aborting")


def build_models(config: TrainConfig, region: RegionSpec) -> tuple[SequenceForecaster, CubeDetector | None]:
    forecaster = SequenceForecaster(
        region,
        hidden_channels=config.hidden_channels,
        kernel_size=config.kernel_size,
        state_activation=config.state_activation,
        with_label_projection=(config.decoder_mode == "label_fed"),
    )
    detector = None
    if config.mode == "t2net":
        detector = CubeDetector(region.channels, config.detector_hidden)
    return forecaster, detector


class Trainer:
    """Owns both parameter sets, the optimizers, and the RNG streams.

    Seed layout: ``seed`` initializes the forecaster, ``seed+1`` the detector,
    ``seed+2`` the shuffle stream, ``seed+3`` the label-guessing stream.
    """

    def __init__(
        self,
        config: TrainConfig,
        region: RegionSpec,
        data: LoadedDataset | dict,
        out_dir: str | Path | None = None,
    ) -> None:
        self.config = config
        self.region = region
        self.splits = _tensor_splits(data)
        if "train" not in self.splits:
            raise ValidationError("training requires a non-empty train split")
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

        self.forecaster, self.detector = build_models(config, region)
        self.forecaster.reset_parameters(torch.Generator().manual_seed(config.seed))
        if self.detector is not None:
            self.detector.reset_parameters(torch.Generator().manual_seed(config.seed + 1))
        self.shuffle_rng = torch.Generator().manual_seed(config.seed + 2)
        self.dlg_rng = torch.Generator().manual_seed(config.seed + 3)

        self.opt_tfn = self._make_optimizer(self.forecaster, config.lr_tfn)
        self.opt_tdn = self._make_optimizer(self.detector, config.lr_tdn) if self.detector else None

        labels = self.splits["train"]["labels"]
        labeled = labels[labels >= 0]
        if labeled.numel() == 0:
            raise ConfigurationError("the train split has no labeled cells at all")
        counts = np.bincount(labeled.numpy(), minlength=NUM_CLASSES)
        self.alpha = torch.from_numpy(
            class_weights(counts, smooth=config.smooth_class_counts)
        ).to(torch.float32)

        # per-channel standardization from the train split; raw channels span
        # many orders of magnitude, which saturates the gates untreated
        train = self.splits["train"]
        flat = torch.cat([
            train["history"].reshape(-1, region.channels),
            train["forecast"].reshape(-1, region.channels),
        ])
        self.feature_mean = flat.mean(dim=0)
        self.feature_std = flat.std(dim=0).clamp_min(1e-6)

        self.epoch = 0
        self.iteration = 0
        self.best_epoch = 0
        self.best_value: float | None = None
        self.epochs_since_best = 0
        self.log_records: list[dict] = []

    def _make_optimizer(self, model, lr: float):
        if model is None:
            return None
        if self.config.optimizer == "adam":
            return torch.optim.Adam(model.parameters(), lr=lr)
        return torch.optim.SGD(model.parameters(), lr=lr)

    # ---------------------------------------------------------------- batches
    def _batches(self, split: str, shuffle: bool):
        tensors = self.splits[split]
        count = tensors["history"].shape[0]
        if shuffle:
            order = torch.randperm(count, generator=self.shuffle_rng)
        else:
            order = torch.arange(count)
        for start in range(0, count, self.config.batch_size):
            idx = order[start : start + self.config.batch_size]
            yield {key: value[idx] for key, value in tensors.items()}

    def _norm(self, cubes: torch.Tensor) -> torch.Tensor:
        return (cubes - self.feature_mean) / self.feature_std

    def _forecast_probs(self, batch: dict[str, torch.Tensor], teacher_labels: bool) -> torch.Tensor:
        labels = batch["labels"] if (teacher_labels and self.config.decoder_mode == "label_fed") else None
        return self.forecaster(
            self._norm(batch["history"]),
            self._norm(batch["forecast"]),
            mode=self.config.decoder_mode,
            labels=labels,
        )

    # ------------------------------------------------------------- pretraining
    def pretrain_detector(self) -> None:
        """Supervised focal-loss pretraining of the detector on the train split."""
        if self.detector is None:
            raise UsageError(f"mode {self.config.mode!r} has no detector to pretrain")
        for _ in range(self.config.tdn_pretrain_epochs):
            for batch in self._batches("train", shuffle=True):
                probs = detect_sequence(self.detector, self._norm(batch["forecast"]))
                loss = supervised_loss(probs, batch["labels"], self.config.focal_gamma)
                _check_finite("detector pretraining loss", loss)
                self.opt_tdn.zero_grad()
                loss.backward()
                self.opt_tdn.step()

    # ------------------------------------------------------------ one epoch
    def _cotrain_batch(self, batch: dict[str, torch.Tensor], tau: float) -> tuple[float, float]:
        cfg = self.config
        probs_f = self._forecast_probs(batch, teacher_labels=True)
        loss_s = supervised_loss(probs_f, batch["labels"], cfg.focal_gamma)
        _check_finite("supervised loss", loss_s)

        if cfg.mode == "t2net":
            probs_d = detect_sequence(self.detector, self._norm(batch["forecast"]))
            guess, quality = dual_ensemble(
                probs_f.detach(),
                probs_d.detach(),
                tau,
                cfg.sharpen_temperature,
                generator=self.dlg_rng,
            )
            loss_u = unsupervised_loss(probs_f, guess, quality, self.alpha, batch["labels"] < 0)
        elif cfg.mode == "hard_pseudo":
            with torch.no_grad():
                confidence, hard = probs_f.max(dim=-1)
                qualify = (batch["labels"] < 0) & (confidence >= cfg.pseudo_confidence)
                onehot = torch.nn.functional.one_hot(hard, NUM_CLASSES).to(probs_f.dtype)
            per_cell = focal_loss(probs_f, onehot, gamma=0.0)
            loss_u = masked_step_mean(per_cell, qualify)
        else:
            loss_u = torch.zeros((), dtype=probs_f.dtype)
        _check_finite("unsupervised loss", loss_u)

        weight = 0.0 if cfg.mode == "supervised" else cfg.unsupervised_weight
        total = combined_loss(loss_s, loss_u, weight)
        self.opt_tfn.zero_grad()
        total.backward()
        self.opt_tfn.step()
        self.iteration += 1

        if cfg.mode == "t2net":
            loss_d = supervised_loss(probs_d, batch["labels"], cfg.focal_gamma)
            _check_finite("detector loss", loss_d)
            self.opt_tdn.zero_grad()
            loss_d.backward()
            self.opt_tdn.step()
        return float(loss_s.detach()), float(loss_u.detach())

    # ------------------------------------------------------------ validation
    def _validate(self) -> dict:
        if "val" not in self.splits:
            return {"val_accuracy": None, "val_weighted_f1": None, "val_loss": None}
        preds = []
        losses = []
        with torch.no_grad():
            for batch in self._batches("val", shuffle=False):
                probs = self._forecast_probs(batch, teacher_labels=False)
                losses.append(float(supervised_loss(probs, batch["labels"], self.config.focal_gamma)))
                preds.append(probs.argmax(dim=-1))
        predictions = torch.cat(preds).numpy()
        labels = self.splits["val"]["labels"].numpy()
        try:
            report = evaluate(predictions, labels)
        except DegenerateInputError:
            return {"val_accuracy": None, "val_weighted_f1": None, "val_loss": float(np.mean(losses))}
        return {
            "val_accuracy": report.accuracy,
            "val_weighted_f1": report.weighted_f1,
            "val_loss": float(np.mean(losses)),
        }

    def _monitor_value(self, val: dict) -> float | None:
        if self.config.early_stop_metric == "weighted_f1":
            return val["val_weighted_f1"]
        loss = val["val_loss"]
        return None if loss is None else -loss  # higher is better, uniformly

    # ---------------------------------------------------------------- training
    def train(self) -> TrainResult:
        """Full run per the configured mode: optional pretraining, co-training
        epochs with the threshold schedule, per-epoch validation, early stop."""
        cfg = self.config
        if cfg.mode == "t2net" and self.epoch == 0:
            self.pretrain_detector()
        stopped_early = False
        for epoch in range(self.epoch + 1, cfg.cotrain_epochs + 1):
            start_time = time.perf_counter()
            tau = (
                mix_threshold(epoch, cfg.ramp_start, cfg.ramp_end, cfg.mix_upper)
                if cfg.mode == "t2net"
                else 0.0
            )
            sup_losses, unsup_losses = [], []
            for batch in self._batches("train", shuffle=True):
                loss_s, loss_u = self._cotrain_batch(batch, tau)
                sup_losses.append(loss_s)
                unsup_losses.append(loss_u)
            self.epoch = epoch
            val = self._validate()
            mean_s = float(np.mean(sup_losses))
            mean_u = float(np.mean(unsup_losses))
            weight = 0.0 if cfg.mode == "supervised" else cfg.unsupervised_weight
            record = {
                "epoch": epoch,
                "tau": tau,
                "L_s": mean_s,
                "L_u": mean_u,
                "L": mean_s + weight * mean_u,
                "val_accuracy": val["val_accuracy"],
                "val_weighted_f1": val["val_weighted_f1"],
                "wall_time": time.perf_counter() - start_time,
            }
            self.log_records.append(record)
            self._append_log(record)

            value = self._monitor_value(val)
            improved = value is not None and (self.best_value is None or value > self.best_value)
            if improved:
                self.best_value = value
                self.best_epoch = epoch
                self.epochs_since_best = 0
                if self.out_dir is not None:
                    self.save_checkpoint(self.out_dir / "checkpoint_best")
            else:
                self.epochs_since_best += 1
            if self.out_dir is not None:
                self.save_checkpoint(self.out_dir / "checkpoint_last")
            if self.epochs_since_best >= cfg.patience:
                stopped_early = True
                break
        final_path = None
        if self.out_dir is not None:
            final_path = self.save_checkpoint(self.out_dir / "checkpoint_final")
        return TrainResult(
            log=self.log_records,
            best_epoch=self.best_epoch,
            best_value=self.best_value if self.best_value is not None else float("nan"),
            stopped_early=stopped_early,
            final_checkpoint=final_path,
            best_checkpoint=(self.out_dir / "checkpoint_best") if self.out_dir else None,
        )

    def _append_log(self, record: dict) -> None:
        if self.out_dir is None:
            return
        with open(self.out_dir / "log.jsonl", "a") as fh:
            fh.write(json.dumps(record) + "\n")

    # ------------------------------------------------------------- checkpoints
    def save_checkpoint(self, path: str | Path) -> Path:
        arrays: dict[str, np.ndarray] = {}
        for name, arr in ckpt.model_arrays(self.forecaster).items():
            arrays[f"tfn.{name}"] = arr
        arrays.update(ckpt.optimizer_arrays("optim_tfn.tfn", self.forecaster, self.opt_tfn))
        if self.detector is not None:
            for name, arr in ckpt.model_arrays(self.detector).items():
                arrays[f"tdn.{name}"] = arr
            arrays.update(ckpt.optimizer_arrays("optim_tdn.tdn", self.detector, self.opt_tdn))
        arrays["rng.shuffle"] = ckpt.generator_array(self.shuffle_rng)
        arrays["rng.dlg"] = ckpt.generator_array(self.dlg_rng)
        manifest = {
            "config": self.config.to_dict(),
            "region": self.region.to_dict(),
            "epoch": self.epoch,
            "iteration": self.iteration,
            "seed": self.config.seed,
            "best_epoch": self.best_epoch,
            "best_value": self.best_value,
            "epochs_since_best": self.epochs_since_best,
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
        }
        return ckpt.save_checkpoint(path, manifest, arrays)

    def restore(self, path: str | Path) -> None:
        """Load a checkpoint into this trainer for bit-exact continuation.

        The stored config must match this trainer's except for the run-length
        knobs (cotrain_epochs, patience), which a resumed run may extend.
        """
        manifest, arrays = ckpt.load_checkpoint(path)
        saved = TrainConfig.from_dict(manifest["config"]).to_dict()
        current = self.config.to_dict()
        for key in ("cotrain_epochs", "patience"):
            saved.pop(key)
            current.pop(key)
        if saved != current:
            diff = sorted(k for k in saved if saved[k] != current[k])
            raise ConfigurationError(f"checkpoint config differs from this trainer's config: {diff}")
        if RegionSpec.from_dict(manifest["region"]) != self.region:
            raise ConfigurationError("checkpoint region differs from this trainer's region")
        tfn_arrays = {k[len("tfn."):]: v for k, v in arrays.items() if k.startswith("tfn.")}
        ckpt.load_model_arrays(self.forecaster, tfn_arrays)
        ckpt.load_optimizer_arrays("optim_tfn.tfn", self.forecaster, self.opt_tfn, arrays)
        if self.detector is not None:
            tdn_arrays = {k[len("tdn."):]: v for k, v in arrays.items() if k.startswith("tdn.")}
            if tdn_arrays:
                ckpt.load_model_arrays(self.detector, tdn_arrays)
                ckpt.load_optimizer_arrays("optim_tdn.tdn", self.detector, self.opt_tdn, arrays)
        ckpt.load_generator_array(self.shuffle_rng, arrays["rng.shuffle"])
        ckpt.load_generator_array(self.dlg_rng, arrays["rng.dlg"])
        self.feature_mean = torch.tensor(manifest["feature_mean"], dtype=torch.float32)
        self.feature_std = torch.tensor(manifest["feature_std"], dtype=torch.float32)
        self.epoch = int(manifest["epoch"])
        self.iteration = int(manifest["iteration"])
        self.best_epoch = int(manifest["best_epoch"])
        self.best_value = manifest["best_value"]
        self.epochs_since_best = int(manifest["epochs_since_best"])

    # -------------------------------------------------------------- inference
    def evaluate_split(self, split: str = "test", config_echo: dict | None = None,
                       use_truth: bool = False) -> EvalReport:
        """Score the forecaster's argmax predictions on one split.

        By default cells with label -1 are skipped; ``use_truth=True`` scores
        against the dense ground-truth grids instead, when the dataset
        carries them (synthetic data does).
        """
        if split not in self.splits:
            raise ValidationError(f"no split named {split!r} in the dataset")
        if use_truth and "truth" not in self.splits[split]:
            raise ValidationError(f"split {split!r} has no dense truth grids")
        preds = []
        with torch.no_grad():
            for batch in self._batches(split, shuffle=False):
                probs = self._forecast_probs(batch, teacher_labels=False)
                preds.append(probs.argmax(dim=-1))
        predictions = torch.cat(preds).numpy()
        key = "truth" if use_truth else "labels"
        labels = self.splits[split][key].numpy()
        echo = {"mode": self.config.mode, "split": split, "epoch": self.epoch,
                "scored_against": key}
        if config_echo:
            echo.update(config_echo)
        return evaluate(predictions, labels, horizon_axis=1, config_echo=echo)

    def predict_sample(self, history: np.ndarray, forecast_features: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray]:
        """One sample's distributions and classes with this trainer's scaling."""
        return forecast(
            self.forecaster, history, forecast_features, mode=self.config.decoder_mode,
            feature_mean=self.feature_mean.numpy(), feature_std=self.feature_std.numpy(),
        )


def forecast(
    forecaster: SequenceForecaster,
    history: np.ndarray,
    forecast_features: np.ndarray,
    mode: str = "feature_fed",
    feature_mean: np.ndarray | None = None,
    feature_std: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Distributions [p,L,W,H,4] and argmax classes [p,L,W,H] for one sample.

    Pass the training-time channel statistics (stored in every checkpoint
    manifest) so inference sees the same standardization.
    """
    hist = torch.from_numpy(np.ascontiguousarray(history, dtype=np.float32)).unsqueeze(0)
    feats = torch.from_numpy(np.ascontiguousarray(forecast_features, dtype=np.float32)).unsqueeze(0)
    if feature_mean is not None:
        mean = torch.as_tensor(feature_mean, dtype=torch.float32)
        std = torch.as_tensor(feature_std, dtype=torch.float32).clamp_min(1e-6)
        hist = (hist - mean) / std
        feats = (feats - mean) / std
    with torch.no_grad():
        probs = forecaster(hist, feats, mode=mode)[0]
    dist = probs.numpy()
    return dist, dist.argmax(axis=-1).astype(np.int8)


def load_trained(path: str | Path, data: LoadedDataset | dict) -> Trainer:
    """Rebuild a trainer (models + state) from a checkpoint directory."""
    manifest, _ = ckpt.load_checkpoint(path)
    config = TrainConfig.from_dict(manifest["config"])
    region = RegionSpec.from_dict(manifest["region"])
    trainer = Trainer(config, region, data)
    trainer.restore(path)
    return trainer


def run_supervised_baseline(config: TrainConfig, region: RegionSpec,
                            data: LoadedDataset | dict, out_dir=None,
                            use_truth: bool = False) -> tuple[EvalReport, TrainResult]:
    """The forecaster alone, unsupervised weight 0; architecture unchanged."""
    cfg = dataclasses.replace(config, mode="supervised")
    trainer = Trainer(cfg, region, data, out_dir)
    result = trainer.train()
    return trainer.evaluate_split("test", use_truth=use_truth), result


def run_hard_pseudo_baseline(config: TrainConfig, region: RegionSpec,
                             data: LoadedDataset | dict, out_dir=None,
                             use_truth: bool = False) -> tuple[EvalReport, TrainResult]:
    """Single-model self-training with one-hot pseudo-labels above a
    confidence threshold."""
    cfg = dataclasses.replace(config, mode="hard_pseudo")
    trainer = Trainer(cfg, region, data, out_dir)
    result = trainer.train()
    return trainer.evaluate_split("test", use_truth=use_truth), result
