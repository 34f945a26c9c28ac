"""Loss, Noam-scheduled Adam, and the plain training loop for fixed models."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .architecture import batch_tensors
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import WindowSet
from .metrics import EvalBuffer

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Optimization settings.  ``lr`` is the peak of the Noam schedule."""

    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 128
    warmup: int = 8000
    seed: int = 0
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.warmup < 1 or self.lr < 0:
            raise ValueError(f"invalid training settings: {self}")

    def to_json(self) -> dict:
        return asdict(self)


def noam_rate(step: int, d_model: int, warmup: int, factor: float = 1.0) -> float:
    """``factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`` for step >= 1."""
    step = max(step, 1)
    return factor * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


def noam_factor(peak_lr: float, d_model: int, warmup: int) -> float:
    """Factor making the schedule peak at ``peak_lr`` (reached at ``step == warmup``)."""
    return peak_lr * math.sqrt(d_model * warmup)


def masked_bce(logits: Tensor, target: Tensor, mask: Tensor) -> Tensor:
    """Binary cross-entropy averaged over valid positions."""
    losses = F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype), reduction="none")
    m = mask.to(logits.dtype)
    return (losses * m).sum() / m.sum().clamp(min=1.0)


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Per-epoch generator; also reseeds torch so dropout is resumable."""
    torch.manual_seed(seed * 1_000_003 + epoch)
    return np.random.default_rng([seed, epoch])


def export_optimizer(model: nn.Module, optimizer: torch.optim.Adam) -> tuple[dict[str, Tensor], dict]:
    tensors: dict[str, Tensor] = {}
    steps = {}
    names = {id(p): n for n, p in model.named_parameters()}
    for p, state in optimizer.state.items():
        name = names[id(p)]
        tensors[f"optimizer/{name}/exp_avg"] = state["exp_avg"]
        tensors[f"optimizer/{name}/exp_avg_sq"] = state["exp_avg_sq"]
        steps[name] = float(state["step"])
    return tensors, steps


def import_optimizer(model: nn.Module, optimizer: torch.optim.Adam, tensors: Mapping[str, Tensor], steps: dict) -> None:
    for name, p in model.named_parameters():
        if name not in steps:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(steps[name], dtype=torch.float32),
            "exp_avg": tensors[f"optimizer/{name}/exp_avg"].clone().to(p.dtype),
            "exp_avg_sq": tensors[f"optimizer/{name}/exp_avg_sq"].clone().to(p.dtype),
        }


def save_training_state(
    directory: str | Path, model: nn.Module, optimizer: torch.optim.Adam, meta: dict
) -> None:
    tensors = dict(model.state_dict())
    opt_tensors, steps = export_optimizer(model, optimizer)
    tensors.update(opt_tensors)
    save_checkpoint(directory, tensors, {**meta, "optimizer_steps": steps})


def load_training_state(directory: str | Path, model: nn.Module, optimizer: torch.optim.Adam | None = None) -> dict:
    tensors, meta = load_checkpoint(directory)
    state = {k: v for k, v in tensors.items() if not k.startswith("optimizer/")}
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing:
        raise TrainingError(f"checkpoint lacks parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
    if optimizer is not None and "optimizer_steps" in meta:
        import_optimizer(model, optimizer, tensors, meta["optimizer_steps"])
    return meta


@torch.no_grad()
def predict_proba(
    forward: Callable[[Mapping[str, Tensor]], Tensor],
    windows: WindowSet,
    batch_size: int = 256,
    dtype: torch.dtype = torch.float32,
) -> np.ndarray:
    """``(n_windows, L)`` probabilities; padded positions are left as computed."""
    out = []
    for idx in iterate_batches(len(windows), batch_size):
        out.append(forward(batch_tensors(windows, idx, dtype)).cpu().numpy())
    return np.concatenate(out).astype(np.float64)


def evaluate_predictions(pred: np.ndarray, windows: WindowSet) -> dict[str, float]:
    buf = EvalBuffer()
    buf.add(pred, windows.target, windows.valid_mask)
    return buf.summary()


def fit_model(
    model: nn.Module,
    train: WindowSet,
    cfg: TrainConfig,
    validation: WindowSet | None = None,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
) -> list[dict]:
    """Train a fixed-genome model with Adam + Noam under masked BCE."""
    d_model = model.config.d_model
    factor = noam_factor(cfg.lr, d_model, cfg.warmup)
    optimizer = torch.optim.Adam(model.parameters(), lr=0.0)
    step, start_epoch, history = 0, 0, []
    if resume and checkpoint_dir is not None and (Path(checkpoint_dir) / "manifest.json").exists():
        meta = load_training_state(checkpoint_dir, model, optimizer)
        step, start_epoch, history = meta["step"], meta["epoch"], meta.get("history", [])
    for epoch in range(start_epoch, cfg.epochs):
        rng = epoch_rng(cfg.seed, epoch)
        model.train()
        losses = []
        for idx in iterate_batches(len(train), cfg.batch_size, rng):
            batch = batch_tensors(train, idx)
            step += 1
            for group in optimizer.param_groups:
                group["lr"] = noam_rate(step, d_model, cfg.warmup, factor)
            optimizer.zero_grad(set_to_none=True)
            loss = masked_bce(model.logits(batch), batch["target"], batch["mask"])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step} (epoch {epoch})")
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        entry = {"epoch": epoch + 1, "step": step, "train_loss": float(np.mean(losses))}
        if validation is not None:
            model.eval()
            entry["val_auc"] = evaluate_predictions(predict_proba(model, validation), validation)["auc"]
        history.append(entry)
        log.info("epoch %d: %s", epoch + 1, entry)
        if checkpoint_dir is not None and ((epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs):
            save_training_state(checkpoint_dir, model, optimizer, {"step": step, "epoch": epoch + 1, "history": history})
    model.eval()
    return history
