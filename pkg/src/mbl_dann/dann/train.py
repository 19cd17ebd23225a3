"""Saddle-point training with plain SGD.

Per mini-batch the discriminator loss ``L_d`` sees only the labeled half;
the adversary loss ``L_a`` sees both halves with domain targets
(labeled=0, unlabeled=1). The gradient-reversal layer in front of the
adversary turns a single SGD step into

    theta_d -= lr * dL_d/dtheta_d
    theta_a -= lr * dL_a/dtheta_a
    theta_f -= lr * (dL_d/dtheta_f - lam * dL_a/dtheta_f)
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DivergenceError, InvalidArgumentError
from .layers import cross_entropy, softmax, softmax_cross_entropy_backward
from .model import DannModel

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "loss_d", "loss_a", "label_flip_fraction")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    max_epochs: int = 200
    min_epochs: int = 1
    dropout_p: float = 0.5
    lam: float = 1.0
    warmup_epochs: int = 0
    stability_threshold: float = 0.001
    rng_seed: int = 0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgumentError("learning_rate must be >= 0")
        if not 0 <= self.dropout_p < 1:
            raise InvalidArgumentError("dropout_p must lie in [0, 1)")
        if not 0 <= self.stability_threshold <= 1:
            raise InvalidArgumentError("stability_threshold must lie in [0, 1]")
        if self.batch_size < 2:
            raise InvalidArgumentError("batch_size must be >= 2 for batch norm")
        if self.max_epochs < 1 or self.min_epochs < 1:
            raise InvalidArgumentError("epoch counts must be >= 1")

    def lam_at(self, epoch: int) -> float:
        """Reversal strength for a 1-based epoch, ramping linearly from 0 if warm-up is on."""
        if self.warmup_epochs <= 0:
            return self.lam
        return self.lam * min(1.0, (epoch - 1) / self.warmup_epochs)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochLog:
    epoch: int
    loss_d: float
    loss_a: float
    label_flip_fraction: float


@dataclass
class TrainResult:
    model: DannModel
    log: list = field(default_factory=list)
    stopped_early: bool = False

    def write_log(self, path):
        write_training_log(path, self.log)


def write_training_log(path, entries):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for e in entries:
            w.writerow([e.epoch, repr(float(e.loss_d)), repr(float(e.loss_a)),
                        repr(float(e.label_flip_fraction))])


def sgd_update(model: DannModel, lr: float):
    for _, layer, key in model.named_params():
        if key in layer.grads:
            layer.params[key] -= layer.params[key].dtype.type(lr) * layer.grads[key]


def train_step(model: DannModel, x_labeled, y_labeled, x_unlabeled, lr: float):
    """One forward/backward/SGD step on prepared inputs; returns ``(L_d, L_a)``."""
    nl = len(x_labeled)
    x = np.concatenate([x_labeled, x_unlabeled])
    f = model.features.forward(x, training=True)

    pd = softmax(model.discriminator.forward(f[:nl], training=True))
    loss_d = cross_entropy(pd, y_labeled)
    df = np.zeros_like(f)
    df[:nl] = model.discriminator.backward(
        softmax_cross_entropy_backward(pd, y_labeled).astype(f.dtype)
    )

    loss_a = math.nan
    if model.adversary is not None:
        domain = np.concatenate([np.zeros(nl, int), np.ones(len(x_unlabeled), int)])
        pa = softmax(model.adversary.forward(f, training=True))
        loss_a = cross_entropy(pa, domain)
        df = df + model.adversary.backward(
            softmax_cross_entropy_backward(pa, domain).astype(f.dtype)
        )

    model.features.backward(df)
    sgd_update(model, lr)
    return loss_d, loss_a


def predicted_labels(model: DannModel, x) -> np.ndarray:
    return np.argmax(model.phase_proba(x), axis=1)


def train_arrays(model: DannModel, x_labeled, y_labeled, x_unlabeled, cfg: TrainConfig,
                 log_path=None, on_epoch=None) -> TrainResult:
    """Train on raw coefficient rows (``(n, input_dim)`` arrays).

    Stops once the fraction of unlabeled states whose predicted phase changed
    during an epoch drops below ``cfg.stability_threshold`` (after
    ``cfg.min_epochs``), or at ``cfg.max_epochs``. A zero learning rate
    freezes the model entirely, batch-norm statistics included.
    """
    y_labeled = np.asarray(y_labeled, dtype=int)
    n_l, n_u = len(x_labeled), len(x_unlabeled)
    if n_l < 2 or n_u < 1:
        raise InvalidArgumentError("need at least 2 labeled and 1 unlabeled sample")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed, spawn_key=(99,)))
    bs = cfg.batch_size
    steps = max(1, n_l // bs)
    frozen = cfg.learning_rate == 0

    result = TrainResult(model)
    prev = predicted_labels(model, x_unlabeled)
    u_perm, u_pos = rng.permutation(n_u), 0
    for epoch in range(1, cfg.max_epochs + 1):
        model.lam = cfg.lam_at(epoch)
        perm = rng.permutation(n_l)
        losses_d, losses_a = [], []
        if not frozen:
            for s in range(steps):
                li = perm[s * bs:(s + 1) * bs] if n_l >= bs else perm
                ui = []
                while len(ui) < len(li):
                    take = u_perm[u_pos:u_pos + len(li) - len(ui)]
                    ui.extend(take.tolist())
                    u_pos += len(take)
                    if u_pos >= n_u:
                        u_perm, u_pos = rng.permutation(n_u), 0
                ld, la = train_step(
                    model, model.prepare(x_labeled[li]), y_labeled[li],
                    model.prepare(x_unlabeled[np.array(ui)]), cfg.learning_rate,
                )
                if not (math.isfinite(ld) and (model.adversary is None or math.isfinite(la))):
                    raise DivergenceError(f"non-finite loss in epoch {epoch}", epoch=epoch)
                losses_d.append(ld)
                losses_a.append(la)
        else:
            ld, la = evaluate_losses(model, x_labeled, y_labeled, x_unlabeled)
            losses_d.append(ld)
            losses_a.append(la)

        labels = predicted_labels(model, x_unlabeled)
        flip = float(np.mean(labels != prev))
        prev = labels
        entry = EpochLog(epoch, float(np.mean(losses_d)), float(np.mean(losses_a)), flip)
        result.log.append(entry)
        log.info("epoch %d loss_d=%.4f loss_a=%.4f flips=%.4f", *asdict(entry).values())
        if on_epoch is not None:
            on_epoch(entry, model)
        if epoch >= cfg.min_epochs and flip < cfg.stability_threshold:
            result.stopped_early = epoch < cfg.max_epochs
            break
    if log_path is not None:
        write_training_log(log_path, result.log)
    return result


def evaluate_losses(model: DannModel, x_labeled, y_labeled, x_unlabeled):
    """Both losses in inference mode (no dropout, running batch-norm stats)."""
    pd = model.phase_proba(x_labeled)
    loss_d = cross_entropy(pd, y_labeled)
    loss_a = math.nan
    if model.adversary is not None:
        x = np.concatenate([x_labeled, x_unlabeled])
        domain = np.concatenate([np.zeros(len(x_labeled), int), np.ones(len(x_unlabeled), int)])
        loss_a = cross_entropy(model.adversary_proba(x), domain)
    return loss_d, loss_a


def train(model: DannModel, labeled, unlabeled, cfg: TrainConfig, log_path=None,
          on_epoch=None) -> TrainResult:
    """Train on :class:`~mbl_dann.dataset.RecordSet` inputs."""
    sizes = {labeled.n_sites, unlabeled.n_sites, model.n_sites}
    if len(sizes) != 1:
        raise InvalidArgumentError(f"records and model disagree on system size: {sorted(sizes)}")
    if np.any(labeled.phase < 0):
        raise InvalidArgumentError("labeled set contains records without a phase label")
    counts = np.bincount(labeled.phase.astype(int), minlength=2)
    if counts[0] != counts[1]:
        raise InvalidArgumentError(f"labeled set is not class-balanced: {counts.tolist()}")
    return train_arrays(model, labeled.coefficients, labeled.phase.astype(int),
                        unlabeled.coefficients, cfg, log_path, on_epoch)


def read_training_log(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            EpochLog(int(r["epoch"]), float(r["loss_d"]), float(r["loss_a"]),
                     float(r["label_flip_fraction"]))
            for r in csv.DictReader(fh)
        ]

