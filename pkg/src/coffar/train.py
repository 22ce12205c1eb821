"""Plain stochastic gradient descent over pair batches.

Two data regimes share one loop: epoch mode takes a fixed pair list and
reshuffles it each epoch with a seed derived from (seed, epoch), step
mode consumes a PairStream. Every step appends one history record with
the batch loss, the mean predicted entropy, and the batch accuracy at
threshold 0.5.

Checkpoints carry an RNG sidecar (epoch and batch counters, plus the
stream state in step mode) so a resumed run replays the exact batch
sequence of an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from coffar import model as model_mod
from coffar.errors import ConfigError, TrainingDiverged, ValueCheckError
from coffar.model import CenterState, Model, TargetDistribution
from coffar.pairs import PairSample, PairStream

_log = logging.getLogger("coffar.train")

LOSS_KINDS = ("cross_entropy", "cross_entropy_center")

SCORE_THRESHOLD = 0.5


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    Exactly one of epochs (fixed-dataset mode) or total_steps (stream
    mode) must be set.
    """

    learning_rate: float = 0.05
    batch_size: int = 32
    epochs: int | None = None
    total_steps: int | None = None
    seed: int = 0
    loss_kind: str = "cross_entropy"
    center_weight: float = 0.0
    center_update_rate: float = 0.5
    checkpoint_every: int = 0

    def validate(self) -> None:
        if not self.learning_rate >= 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if (self.epochs is None) == (self.total_steps is None):
            raise ConfigError("set exactly one of epochs or total_steps")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.total_steps is not None and self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(
                f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}"
            )
        if self.loss_kind == "cross_entropy_center" and self.center_weight <= 0.0:
            raise ConfigError("center loss requires center_weight > 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "total_steps": self.total_steps,
            "seed": self.seed,
            "loss_kind": self.loss_kind,
            "center_weight": self.center_weight,
            "center_update_rate": self.center_update_rate,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls().to_dict())
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        merged = cls().to_dict()
        merged.update(data)
        try:
            cfg = cls(
                learning_rate=float(merged["learning_rate"]),
                batch_size=int(merged["batch_size"]),
                epochs=None if merged["epochs"] is None else int(merged["epochs"]),
                total_steps=(
                    None if merged["total_steps"] is None
                    else int(merged["total_steps"])
                ),
                seed=int(merged["seed"]),
                loss_kind=str(merged["loss_kind"]),
                center_weight=float(merged["center_weight"]),
                center_update_rate=float(merged["center_update_rate"]),
                checkpoint_every=int(merged["checkpoint_every"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed train config: {exc}")
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class HistoryRecord:
    step: int
    loss: float
    entropy: float
    batch_accuracy: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "loss": self.loss,
                "entropy": self.entropy,
                "batch_accuracy": self.batch_accuracy,
            }
        )


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)

    def write_jsonl(self, path, append: bool = False) -> None:
        mode = "a" if append else "w"
        with open(path, mode) as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "TrainHistory":
        records = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    d = json.loads(line)
                    records.append(HistoryRecord(**d))
        return cls(records=records)


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Per-epoch shuffle order, a pure function of (seed, epoch)."""
    ss = np.random.SeedSequence(seed, spawn_key=(1000 + epoch,))
    rng = np.random.Generator(np.random.PCG64(ss))
    return rng.permutation(n)


def _mean_entropy(probs: np.ndarray) -> float:
    safe = np.where(probs > 0.0, probs, 1.0)
    return float(-(probs * np.log(safe)).sum(axis=1).mean())


def _batch_accuracy(probs: np.ndarray, targets: np.ndarray) -> float:
    predicted_same = probs[:, 1] >= SCORE_THRESHOLD
    actual_same = targets[:, 1] > 0.5
    return float((predicted_same == actual_same).mean())


def _sidecar_path(ckpt_path: Path) -> Path:
    return ckpt_path.with_name(ckpt_path.name + ".rng.json")


def _write_checkpoint(model: Model, out_dir: Path, tag: str, step: int,
                      epoch: int, pos: int, last_loss: float,
                      stream_state: dict | None) -> Path:
    path = out_dir / f"checkpoint_{tag}.coffar.json"
    model_mod.save_checkpoint(model, path, epoch=epoch, train_loss=last_loss)
    sidecar = {
        "format_version": 1,
        "step": step,
        "epoch": epoch,
        "pos": pos,
        "stream_state": stream_state,
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, indent=1)
        fh.write("\n")
    return path


def read_sidecar(ckpt_path) -> dict:
    with open(_sidecar_path(Path(ckpt_path))) as fh:
        return json.load(fh)


def _as_batch(samples: list[PairSample]):
    return [
        (s.image, TargetDistribution(label=s.label))
        for s in samples
    ]


def train(
    model: Model,
    data,
    config: TrainConfig,
    out_dir=None,
    resume: dict | None = None,
) -> tuple[Model, TrainHistory]:
    """Run SGD and return the trained model plus per-step history.

    Args:
      model: the model to optimize, updated in place.
      data: a list of PairSample (epoch mode) or a PairStream
        (step mode).
      config: hyperparameters; config.validate() is called here.
      out_dir: where checkpoints go. Required when
        config.checkpoint_every > 0; when set, a final checkpoint is
        always written.
      resume: a sidecar dict from read_sidecar. Training continues from
        that point and the returned history covers only the new steps.

    Raises TrainingDiverged when the loss leaves the finite range.
    """
    config.validate()
    out_path = Path(out_dir) if out_dir is not None else None
    if config.checkpoint_every > 0 and out_path is None:
        raise ConfigError("checkpoint_every needs an output directory")
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    center = None
    if config.loss_kind == "cross_entropy_center":
        center = CenterState.zeros(model.feature_width, config.center_update_rate)

    history = TrainHistory()
    step = 0 if resume is None else int(resume["step"])
    last_loss = 0.0

    def run_step(samples: list[PairSample], next_epoch: int, next_pos: int,
                 stream_state: dict | None) -> None:
        """One SGD update. next_epoch / next_pos name the batch a resumed
        run would execute after this step; they go into the sidecar."""
        nonlocal step, last_loss
        batch = _as_batch(samples)
        x = np.stack([img for img, _ in batch])[:, None]
        targets = np.stack([t.probs for _, t in batch])
        value, grads, probs, feats = model_mod._loss_gradients_full(
            model, x, targets, center=center, center_weight=config.center_weight
        )
        if not np.isfinite(value):
            raise TrainingDiverged(
                f"loss became {value!r} at step {step + 1} "
                f"(learning_rate={config.learning_rate})"
            )
        for name, p in model.named_parameters():
            p -= config.learning_rate * grads[name]
        if center is not None:
            center.update(feats, targets.argmax(axis=1))
        step += 1
        last_loss = value
        history.records.append(
            HistoryRecord(
                step=step,
                loss=value,
                entropy=_mean_entropy(probs),
                batch_accuracy=_batch_accuracy(probs, targets),
            )
        )
        if (
            out_path is not None
            and config.checkpoint_every > 0
            and step % config.checkpoint_every == 0
        ):
            _write_checkpoint(model, out_path, f"{step:06d}", step, next_epoch,
                              next_pos, last_loss, stream_state)

    if config.epochs is not None:
        pairs = list(data)
        if not pairs:
            raise ValueCheckError("cannot train on an empty pair list")
        n = len(pairs)
        steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
        start_epoch = 0 if resume is None else int(resume["epoch"])
        start_pos = 0 if resume is None else int(resume["pos"])
        for epoch in range(start_epoch, config.epochs):
            perm = _epoch_permutation(config.seed, epoch, n)
            first = start_pos if epoch == start_epoch else 0
            for bi in range(first, steps_per_epoch):
                chunk = perm[bi * config.batch_size : (bi + 1) * config.batch_size]
                samples = [pairs[k] for k in chunk]
                if bi + 1 < steps_per_epoch:
                    next_epoch, next_pos = epoch, bi + 1
                else:
                    next_epoch, next_pos = epoch + 1, 0
                run_step(samples, next_epoch, next_pos, None)
        if out_path is not None:
            _write_checkpoint(model, out_path, "final", step, config.epochs, 0,
                              last_loss, None)
    else:
        stream = data
        for _ in range(step, config.total_steps):
            samples = [next(stream) for _ in range(config.batch_size)]
            state = stream.state() if isinstance(stream, PairStream) else None
            run_step(samples, 0, 0, state)
        if out_path is not None:
            state = stream.state() if isinstance(stream, PairStream) else None
            _write_checkpoint(model, out_path, "final", step, 0, 0,
                              last_loss, state)

    _log.info("finished at step %d, last loss %.6f", step, last_loss)
    return model, history


def evaluate_epoch_entropy(model: Model, pairs: list[PairSample]) -> float:
    """Mean predicted entropy over a pair list, in nats."""
    if not pairs:
        raise ValueCheckError("pair list must not be empty")
    images = np.stack([p.image for p in pairs])
    probs = model_mod.forward_batch(model, images)
    return _mean_entropy(probs)
