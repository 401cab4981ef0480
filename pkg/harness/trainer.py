# trainer.py
# Linear-probe then end-to-end training, early stopping, prediction

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Set

import numpy as np

from asam import LossWeights, loss_terms
from config import TrainConfig
from errors import NonFiniteError, TrainingError
from harness.data import FoldArrays
from harness.metrics import Metrics, evaluate_scores
from harness.model import BACKBONE_GROUP, HEAD_GROUP, RtgmffModel, loss_weights_for
from numcore import AdamW, ScheduleConfig, Tensor, backward, functional as F, lr_at, no_grad, reset_tape

logger = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    phase: str          # "probe" while the backbone is frozen, then "finetune"
    lr_scale: float
    train_loss: float
    train_cls: float
    train_align: float
    train_reg: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    state: Dict[str, np.ndarray]
    history: List[EpochRecord]
    best_epoch: int
    best_val_loss: float
    stopped_early: bool
    # subjects whose data went through a train-mode forward pass (batch-norm statistics)
    exposure: Set[str] = field(default_factory=set)

    def history_dicts(self) -> List[dict]:
        return [asdict(r) for r in self.history]


def _batches(n: int, batch_size: int, rng: Optional[np.random.Generator]) -> List[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _forward_loss(model: RtgmffModel, batch: FoldArrays, weights: LossWeights):
    logits, z = model(Tensor(batch.images), Tensor(batch.demo), Tensor(batch.text))
    terms = loss_terms(logits, batch.labels, z, batch.text, model.head, weights)
    return logits, terms


def _validate(model: RtgmffModel, val: FoldArrays, weights: LossWeights, batch_size: int):
    """(mean loss, accuracy) in eval mode"""
    model.eval()
    total, correct = 0.0, 0
    with no_grad():
        for index in _batches(len(val), batch_size, None):
            batch = val.take(index)
            logits, terms = _forward_loss(model, batch, weights)
            total += terms.total.item() * len(index)
            correct += int(np.sum(np.argmax(logits.data, axis=-1) == batch.labels))
    return total / len(val), correct / len(val)


def train_model(model: RtgmffModel, train: FoldArrays, val: FoldArrays, cfg: TrainConfig, seed: int,
                weights: Optional[LossWeights] = None, max_epochs: Optional[int] = None,
                early_stop: bool = True, initial_state: Optional[Dict[str, np.ndarray]] = None,
                tag: str = "") -> TrainResult:
    """
    Epochs 1..freeze_backbone_epochs update the head group only; afterwards end-to-end.
    The model is left holding the best-validation parameters.
    """
    if len(train) == 0:
        raise TrainingError(f"{tag}: empty training split")
    if len(val) == 0:
        raise TrainingError(f"{tag}: empty validation split")
    weights = weights or loss_weights_for(cfg)
    epochs = max_epochs or cfg.max_epochs
    if initial_state is not None:
        model.load_state_dict(initial_state)
        logger.info(f"{tag}: warm start from {len(initial_state)} stored entries")

    groups = model.param_groups()
    optimizer = AdamW(groups, {BACKBONE_GROUP: cfg.backbone_lr, HEAD_GROUP: cfg.head_lr},
                      weight_decay=cfg.weight_decay)
    # lr_at(horizon) = 0, so the horizon sits one past the last epoch to keep that epoch trainable
    schedule = ScheduleConfig(base_lr=1.0, warmup_epochs=min(cfg.warmup_epochs, epochs - 1), max_epochs=epochs + 1)
    rng = np.random.default_rng(seed)

    history: List[EpochRecord] = []
    exposure: Set[str] = set()
    best_loss, best_epoch, best_state = float("inf"), 0, model.state_dict()
    wait, stopped = 0, False

    for epoch in range(1, epochs + 1):
        probe = epoch <= cfg.freeze_backbone_epochs
        model.set_backbone_trainable(not probe)
        scale = lr_at(epoch, schedule)
        model.train()
        sums = np.zeros(4)
        for b, index in enumerate(_batches(len(train), cfg.batch_size, rng)):
            batch = train.take(index)
            reset_tape()
            try:
                _, terms = _forward_loss(model, batch, weights)
                values = terms.as_floats()
                if not np.isfinite(values["loss"]):
                    raise NonFiniteError(f"loss {values['loss']}")
                backward(terms.total)
            except NonFiniteError as e:
                raise TrainingError(f"{tag}: non-finite value at epoch {epoch}, batch {b}: {e}") from e
            exposure.update(batch.ids)
            optimizer.step(scale)
            optimizer.zero_grad()
            sums += np.array([values["loss"], values["cls"], values["align"], values["reg"]]) * len(index)
        sums /= len(train)

        val_loss, val_acc = _validate(model, val, weights, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingError(f"{tag}: non-finite validation loss at epoch {epoch}")
        history.append(EpochRecord(epoch=epoch, phase="probe" if probe else "finetune", lr_scale=scale,
                                   train_loss=float(sums[0]), train_cls=float(sums[1]),
                                   train_align=float(sums[2]), train_reg=float(sums[3]),
                                   val_loss=val_loss, val_acc=val_acc))
        logger.debug(f"{tag} epoch {epoch}: train {sums[0]:.4f}, val {val_loss:.4f}, acc {val_acc:.3f}")

        if val_loss < best_loss:
            best_loss, best_epoch, best_state = val_loss, epoch, model.state_dict()
            wait = 0
        else:
            wait += 1
            if early_stop and wait >= cfg.early_stop_patience:
                stopped = True
                logger.info(f"{tag}: early stop at epoch {epoch} (best {best_epoch}, val loss {best_loss:.4f})")
                break

    model.set_backbone_trainable(True)
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(state=best_state, history=history, best_epoch=best_epoch, best_val_loss=best_loss,
                       stopped_early=stopped, exposure=exposure)


def predict(model: RtgmffModel, arrays: FoldArrays, batch_size: int = 8) -> np.ndarray:
    """Softmax probability of the patient class, in eval mode"""
    model.eval()
    probs = []
    with no_grad():
        for index in _batches(len(arrays), batch_size, None):
            batch = arrays.take(index)
            logits, _ = model(Tensor(batch.images), Tensor(batch.demo), Tensor(batch.text))
            probs.append(F.softmax(logits, axis=-1).data[:, 1])
    return np.concatenate(probs)


def evaluate(model: RtgmffModel, arrays: FoldArrays, batch_size: int = 8) -> Metrics:
    return evaluate_scores(predict(model, arrays, batch_size), arrays.labels)
