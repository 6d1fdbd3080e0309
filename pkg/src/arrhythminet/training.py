"""Mini-batch training loop."""

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError, TrainingDivergedError
from .models import check_beats
from .nn import functional as F
from .nn.optim import OptimizerConfig, make_optimizer

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batches_per_epoch: int = 500
    batch_size: int = 48
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    variant: str = "v1"

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        for name in ("epochs", "batches_per_epoch", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    seconds: float


@dataclass
class History:
    epochs: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)

    @property
    def losses(self):
        return [e.loss for e in self.epochs]

    @property
    def accuracies(self):
        return [e.accuracy for e in self.epochs]

    def to_rows(self):
        return [asdict(e) for e in self.epochs]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "loss", "accuracy", "seconds"])
            for e in self.epochs:
                w.writerow([e.epoch, f"{e.loss:.6f}", f"{e.accuracy:.6f}", f"{e.seconds:.3f}"])


def batch_indices(n, batch_size, n_batches, rng):
    """Indices for one epoch: consecutive slices of fresh permutations of ``range(n)``."""
    need = batch_size * n_batches
    perms = [rng.permutation(n) for _ in range(math.ceil(need / n))]
    return np.concatenate(perms)[:need].reshape(n_batches, batch_size)


def train(model, beats, labels, config=None, callback=None):
    """Train ``model`` in place; returns ``(model, history)``.

    Each epoch draws ``batches_per_epoch`` batches from seeded permutations
    of the training set, reshuffled every epoch. ``callback(epoch, batch, loss)``
    is called after each optimiser step.
    """
    config = config or TrainConfig()
    x = check_beats(beats, model.spec.input_length).astype(model.dtype, copy=False)
    y = F.check_labels(labels, model.spec.n_classes)
    if len(x) == 0:
        raise DataError("training set is empty")
    if len(y) != len(x):
        raise DataError(f"{len(y)} labels for {len(x)} beats")
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(config.optimizer)
    params = model.parameters()
    history = History()
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        total_loss = 0.0
        correct = 0
        seen = 0
        for b, idx in enumerate(batch_indices(len(x), config.batch_size, config.batches_per_epoch, rng), 1):
            logits = model.forward(x[idx], training=True)
            loss, probs, dlogits = F.softmax_cross_entropy(logits.astype(np.float64), y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            model.backward(dlogits.astype(model.dtype))
            optimizer.step(params, model.gradients())
            history.step_losses.append(loss)
            total_loss += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == y[idx]))
            seen += len(idx)
            if callback is not None:
                callback(epoch, b, loss)
        rec = EpochRecord(epoch, total_loss / seen, correct / seen, time.perf_counter() - start)
        history.epochs.append(rec)
        log.info("epoch %d loss %.4f acc %.4f (%.1fs)", rec.epoch, rec.loss, rec.accuracy, rec.seconds)
    return model, history


def accuracy(model, beats, labels):
    pred = model.predict_proba(beats).argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)))
