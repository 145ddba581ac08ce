"""Training loop, cosine learning-rate schedule and the ablation driver."""
import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .data import GAMMA, PatchDataset, PatchSpec, list_scenes, load_scene
from .errors import ConfigurationError, InvalidArgumentError, TrainingDivergedError
from .metrics import METRIC_KEYS, evaluate
from .model import PSFNet, read_checkpoint, save_checkpoint
from .tonemap import TonemapParams, tonemapped_l1

log = logging.getLogger(__name__)

SCHEDULES = ("cosine", "constant")


@dataclass
class TrainConfig:
    lr_initial: float = 1e-4
    lr_final: float = 1e-6
    epochs: int = 210
    batch_size: int = 8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    schedule: str = "cosine"
    checkpoint_every: int = 10
    grad_clip: Optional[float] = None
    num_threads: Optional[int] = None

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"schedule must be one of {SCHEDULES}")
        if self.schedule == "cosine" and not self.lr_final < self.lr_initial:
            raise ConfigurationError("lr_final must be below lr_initial")
        if self.checkpoint_every <= 0:
            raise ConfigurationError("checkpoint_every must be positive")


@dataclass
class TrainState:
    epoch: int = 0  # next epoch to run
    step: int = 0
    best_metric: float = math.nan

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    model: PSFNet
    state: TrainState
    checkpoint: Optional[Path]
    epoch_log: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)


def lr_at(epoch, config):
    """Per-epoch learning rate, cosine-annealed from ``lr_initial`` to ``lr_final``."""
    if not 0 <= epoch < config.epochs:
        raise InvalidArgumentError(f"epoch {epoch} outside [0, {config.epochs})")
    if config.schedule == "constant" or config.epochs == 1:
        return config.lr_initial
    w = 0.5 * (1.0 + math.cos(math.pi * epoch / (config.epochs - 1)))
    # written as a convex combination so both endpoints are exact
    return config.lr_initial * w + config.lr_final * (1.0 - w)


def make_optimizer(model, config):
    return torch.optim.Adam(
        model.parameters(), lr=config.lr_initial,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps, weight_decay=config.weight_decay)


def epoch_order(n, seed, epoch):
    return np.random.default_rng([seed, epoch, 0x5EED]).permutation(n)


class Trainer:
    """Owns one model, its optimizer and the patch dataset.

    Checkpoints carry the model config, weights, optimizer moments, the
    :class:`TrainState` and the torch RNG state, so :meth:`resume` continues
    with the same step count and schedule position.
    """

    def __init__(self, model, dataset, config, tonemap=None, out_dir=None):
        if len(dataset) == 0:
            raise ConfigurationError("training set is empty (no scenes with ground truth)")
        self.model = model
        self.dataset = dataset
        self.config = config
        self.tonemap = tonemap or TonemapParams()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.optimizer = make_optimizer(model, config)
        self.state = TrainState()
        self.epoch_log = []
        self.step_losses = []

    def _batches(self, epoch):
        order = epoch_order(len(self.dataset), self.config.seed, epoch)
        bs = self.config.batch_size
        for i in range(0, len(order), bs):
            items = [self.dataset[int(j)] for j in order[i:i + bs]]
            yield [torch.stack(t) for t in zip(*items)]

    def _diverged(self, loss, epoch):
        dump = None
        if self.out_dir is not None:
            dump = self.out_dir / f"diverged_epoch{epoch}_step{self.state.step}.bin"
            save_checkpoint(dump, self.model, **self._extra(), loss=loss.item())
        raise TrainingDivergedError(
            f"non-finite loss {loss.item()} at epoch {epoch}, step {self.state.step}"
            + (f"; state dumped to {dump}" if dump else ""), dump)

    def train_epoch(self, epoch):
        lr = lr_at(epoch, self.config)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.model.train()
        self.dataset.set_epoch(epoch)
        start = time.perf_counter()
        total, count = 0.0, 0
        for x1, x2, x3, target in self._batches(epoch):
            pred = self.model(x1, x2, x3)
            loss = tonemapped_l1(pred, target, self.tonemap)
            if not torch.isfinite(loss):
                self._diverged(loss, epoch)
            self.optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if self.config.grad_clip:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
            self.optimizer.step()
            self.state.step += 1
            value = loss.item()
            self.step_losses.append(value)
            total += value * x1.shape[0]
            count += x1.shape[0]
        record = {"epoch": epoch, "lr": lr, "train_loss": total / count,
                  "wall_time": time.perf_counter() - start}
        self.epoch_log.append(record)
        self.state.epoch = epoch + 1
        return record

    def _extra(self):
        return {
            "train_config": dataclasses.asdict(self.config),
            "train_state": self.state.to_dict(),
            "optimizer": self.optimizer.state_dict(),
            "torch_rng": torch.get_rng_state(),
        }

    def save(self, path):
        save_checkpoint(path, self.model, **self._extra())

    def resume(self, path):
        payload = read_checkpoint(path)
        if payload.get("train_state") is None:
            raise ConfigurationError(f"{path}: checkpoint carries no training state")
        if payload["model_config"] != self.model.config.to_dict():
            raise ConfigurationError(f"{path}: model config differs from the run's config")
        self.model.load_state_dict(payload["state_dict"])
        self.optimizer.load_state_dict(payload["optimizer"])
        self.state = TrainState(**payload["train_state"])
        torch.set_rng_state(payload["torch_rng"])

    def fit(self, log_path=None):
        """Run the remaining epochs; returns the path of the last checkpoint."""
        last = None
        for epoch in range(self.state.epoch, self.config.epochs):
            record = self.train_epoch(epoch)
            log.info("epoch %d lr %.3g loss %.5f (%.1fs)", epoch, record["lr"],
                     record["train_loss"], record["wall_time"])
            if log_path is not None:
                with open(log_path, "a") as fh:
                    fh.write(json.dumps(record) + "\n")
            final = epoch == self.config.epochs - 1
            if self.out_dir is not None and (final or (epoch + 1) % self.config.checkpoint_every == 0):
                last = self.out_dir / f"ckpt_epoch{epoch + 1}.bin"
                self.save(last)
        return last


@dataclass
class DataConfig:
    patch_size: int = 256
    stride: int = 128
    augment: bool = True
    # "HxW" target size at load time, or "none" to keep native resolution
    resize: str = "1000x1500"
    gamma: float = GAMMA

    @property
    def resize_to(self):
        if self.resize.strip().lower() in ("", "none", "native"):
            return None
        try:
            h, w = (int(v) for v in self.resize.lower().split("x"))
        except ValueError:
            raise ConfigurationError(f"resize must look like 1000x1500, got {self.resize!r}") from None
        return h, w

    def patch_spec(self):
        return PatchSpec(self.patch_size, self.stride)


def build_model(model_config, seed):
    torch.manual_seed(seed)
    return PSFNet(model_config)


def train_samples(samples, model_config, train_config, out_dir=None, data_config=None,
                  tonemap=None, resume=None):
    """Train on in-memory :class:`SceneSample` objects."""
    data_config = data_config or DataConfig()
    if train_config.num_threads:
        torch.set_num_threads(train_config.num_threads)
    dataset = PatchDataset(samples, data_config.patch_spec(), augment=data_config.augment,
                           seed=train_config.seed, gamma=data_config.gamma)
    model = build_model(model_config, train_config.seed)
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.jsonl"
    trainer = Trainer(model, dataset, train_config, tonemap, out_dir)
    if resume is not None:
        trainer.resume(resume)
    elif log_path is not None and log_path.exists():
        log_path.unlink()
    ckpt = trainer.fit(log_path)
    return TrainResult(model, trainer.state, ckpt, trainer.epoch_log, trainer.step_losses)


def load_training_set(root, data_config):
    samples = [load_scene(p, data_config.resize_to) for p in list_scenes(root)]
    samples = [s for s in samples if s.ground_truth is not None]
    if not samples:
        raise ConfigurationError(f"no training scenes with ground truth under {root}")
    return samples


def train(data_root, model_config, train_config, out_dir=None, data_config=None,
          tonemap=None, resume=None):
    """Train from a dataset root of scene directories."""
    data_config = data_config or DataConfig()
    samples = load_training_set(data_root, data_config)
    return train_samples(samples, model_config, train_config, out_dir, data_config,
                         tonemap, resume)


# ---------------------------------------------------------------------------
# ablations


def fusion_variants(base):
    return [(mode.capitalize() if mode != "sffb" else "SFFB", base.replace(fusion_mode=mode))
            for mode in ("summation", "concatenation", "sffb")]


def component_variants(base):
    return [
        ("w/o PSFBs", base.replace(enable_psfb_stack=False)),
        ("w/o DAB", base.replace(enable_dab=False)),
        ("w/o LSC", base.replace(enable_local_skip=False)),
        ("w/o GSC", base.replace(enable_global_skip=False)),
        ("PSFNet", base),
    ]


def block_count_variants(base, counts=range(4, 9)):
    return [(str(n), base.replace(num_psfb=n)) for n in counts]


PRESETS = {
    "fusion": fusion_variants,
    "components": component_variants,
    "blocks": block_count_variants,
}


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)  # (variant, {metric: value})

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["variant", *METRIC_KEYS])
            for name, vals in self.rows:
                writer.writerow([name, *(("inf" if math.isinf(vals[k]) else f"{vals[k]:.4f}")
                                         for k in METRIC_KEYS)])


def run_ablation(variants, train_config, train_root, test_root=None, out_dir=None,
                 data_config=None, tonemap=None, tile_spec=None):
    """Train and evaluate each ``(name, ModelConfig)`` with the same seed and data."""
    report = AblationReport()
    if not variants:
        return report
    data_config = data_config or DataConfig()
    samples = load_training_set(train_root, data_config)
    test_root = test_root or train_root
    names = [n for n, _ in variants]
    if len(set(names)) != len(names):
        raise ConfigurationError(f"duplicate variant names in {names}")
    for name, model_config in variants:
        run_dir = None
        if out_dir is not None:
            run_dir = Path(out_dir) / _slug(name)
        log.info("ablation variant %s", name)
        result = train_samples(samples, model_config, train_config, run_dir, data_config, tonemap)
        metrics = evaluate(result.model, test_root, tonemap, tile_spec, data_config.resize_to)
        report.rows.append((name, metrics.averages))
    if out_dir is not None:
        report.write_csv(Path(out_dir) / "ablation.csv")
    return report


def _slug(name):
    return "".join(c if c.isalnum() else "_" for c in name).strip("_").lower() or "variant"

