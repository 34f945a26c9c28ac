"""Weight-sharing supernet: sub-model views, sandwich training, AUC fitness."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import torch
from torch import Tensor, nn

from .architecture import KTTransformer, ModelConfig, SearchableTransformer, batch_tensors
from .dataset import WindowSet
from .genome import FitnessRecord, Genome, SearchSpace, encode, sample
from .metrics import EvalBuffer, MetricError
from .training import (
    TrainConfig,
    TrainingError,
    epoch_rng,
    iterate_batches,
    load_training_state,
    masked_bce,
    noam_factor,
    noam_rate,
    save_training_state,
)

log = logging.getLogger(__name__)

GLOBAL_TRIPLET = (0, 2, 1)
LOCAL_TRIPLET = (1, 0, 0)


class Supernet(SearchableTransformer):
    """Every candidate operation at every slot, each with its own weights."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg, genome=None)


def owned_parameter_names(genome: Genome, cfg: ModelConfig) -> set[str]:
    """Supernet parameter names touched by ``genome``."""
    with torch.device("meta"):
        view = KTTransformer(cfg, genome)
    return {n for n, _ in view.named_parameters()}


class SubnetView:
    """A genome's sub-model backed by the supernet's parameters (no copy)."""

    def __init__(self, supernet: Supernet, genome: Genome):
        self.supernet = supernet
        self.genome = genome
        self.config = supernet.config

    def logits(self, batch: Mapping[str, Tensor]) -> Tensor:
        return self.supernet.logits(batch, self.genome)

    def __call__(self, batch: Mapping[str, Tensor]) -> Tensor:
        return self.supernet(batch, self.genome)

    def named_parameters(self) -> Iterator[tuple[str, nn.Parameter]]:
        names = owned_parameter_names(self.genome, self.config)
        for name, p in self.supernet.named_parameters():
            if name in names:
                yield name, p

    def parameters(self) -> Iterator[nn.Parameter]:
        for _, p in self.named_parameters():
            yield p


def extract(supernet: Supernet, genome: Genome) -> SubnetView:
    return SubnetView(supernet, genome)


def _random_bits(space: SearchSpace, rng: np.random.Generator) -> tuple[tuple[int, ...], tuple[int, ...]]:
    g = sample(space, rng)
    return g.b_en, g.b_de


def sandwich_genomes(
    space: SearchSpace, rng: np.random.Generator
) -> tuple[Genome, Genome, Genome]:
    """``(sub_g, sub_l, sub_r)`` for one batch; selections are drawn per sub-model."""
    n = space.n_blocks
    sub_g = Genome(*_random_bits(space, rng), (GLOBAL_TRIPLET,) * (2 * n))
    sub_l = Genome(*_random_bits(space, rng), (LOCAL_TRIPLET,) * (2 * n))
    sub_r = sample(space, rng)
    return sub_g, sub_l, sub_r


@dataclass
class StepCounters:
    forwards: int = 0
    backwards: int = 0
    updates: int = 0
    batches: int = 0


@dataclass
class SandwichResult:
    losses: list[float]
    genomes: tuple[Genome, Genome, Genome]


def sandwich_step(
    supernet: Supernet,
    batch: Mapping[str, Tensor],
    optimizer: torch.optim.Optimizer,
    lr: float,
    rng: np.random.Generator,
    space: SearchSpace | None = None,
    counters: StepCounters | None = None,
) -> SandwichResult:
    """Three forwards (global, local, random sub-model), one summed backward,
    one optimizer update at learning rate ``lr``."""
    cfg = supernet.config
    space = space or SearchSpace.initial(cfg.num_features, cfg.n_blocks)
    counters = counters if counters is not None else StepCounters()
    genomes = sandwich_genomes(space, rng)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    total = None
    losses = []
    for g in genomes:
        loss = masked_bce(supernet.logits(batch, g), batch["target"], batch["mask"])
        counters.forwards += 1
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss.item()} for sub-model {g}")
        losses.append(loss.item())
        total = loss if total is None else total + loss
    total.backward()
    counters.backwards += 1
    optimizer.step()
    counters.updates += 1
    counters.batches += 1
    return SandwichResult(losses, genomes)


@dataclass
class SupernetTrainer:
    """Epoch loop around `sandwich_step` with per-epoch checkpoints."""

    supernet: Supernet
    config: TrainConfig
    space: SearchSpace | None = None
    checkpoint_dir: str | Path | None = None
    counters: StepCounters = field(default_factory=StepCounters)
    history: list[dict] = field(default_factory=list)
    step: int = 0
    epoch: int = 0

    def __post_init__(self):
        self.optimizer = torch.optim.Adam(self.supernet.parameters(), lr=0.0)
        cfg = self.supernet.config
        self._factor = noam_factor(self.config.lr, cfg.d_model, self.config.warmup)

    def lr_at(self, step: int) -> float:
        return noam_rate(step, self.supernet.config.d_model, self.config.warmup, self._factor)

    def resume(self) -> bool:
        if self.checkpoint_dir is None or not (Path(self.checkpoint_dir) / "manifest.json").exists():
            return False
        meta = load_training_state(self.checkpoint_dir, self.supernet, self.optimizer)
        self.step, self.epoch = meta["step"], meta["epoch"]
        self.history = meta.get("history", [])
        return True

    def run_epoch(self, train: WindowSet) -> dict:
        rng = epoch_rng(self.config.seed, self.epoch)
        self.supernet.train()
        losses = []
        for idx in iterate_batches(len(train), self.config.batch_size, rng):
            self.step += 1
            res = sandwich_step(
                self.supernet,
                batch_tensors(train, idx),
                self.optimizer,
                self.lr_at(self.step),
                rng,
                self.space,
                self.counters,
            )
            losses.append(res.losses)
        self.epoch += 1
        arr = np.asarray(losses)
        entry = {
            "epoch": self.epoch,
            "step": self.step,
            "loss_global": float(arr[:, 0].mean()),
            "loss_local": float(arr[:, 1].mean()),
            "loss_random": float(arr[:, 2].mean()),
            "train_loss": float(arr.mean()),
        }
        self.history.append(entry)
        log.info("supernet epoch %d: %s", self.epoch, entry)
        every = self.config.checkpoint_every
        if self.checkpoint_dir is not None and (self.epoch % every == 0 or self.epoch == self.config.epochs):
            save_training_state(
                self.checkpoint_dir,
                self.supernet,
                self.optimizer,
                {"step": self.step, "epoch": self.epoch, "history": self.history},
            )
        return entry

    def fit(self, train: WindowSet) -> list[dict]:
        while self.epoch < self.config.epochs:
            self.run_epoch(train)
        self.supernet.eval()
        return self.history


def train_supernet(
    supernet: Supernet,
    train: WindowSet,
    cfg: TrainConfig,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
    space: SearchSpace | None = None,
) -> list[dict]:
    trainer = SupernetTrainer(supernet, cfg, space, checkpoint_dir)
    if resume:
        trainer.resume()
    return trainer.fit(train)


class SupernetEvaluator:
    """Validation-AUC fitness on a fixed, seed-chosen subset of batches.

    Dropout is disabled and results are cached by genome, so repeated or
    reordered evaluations agree exactly.
    """

    def __init__(
        self,
        supernet: Supernet,
        windows: WindowSet,
        max_batches: int | None = 64,
        batch_size: int = 128,
        seed: int = 0,
    ):
        if len(windows) == 0:
            raise ValueError("validation subset is empty")
        self.supernet = supernet
        chunks = [idx for idx in iterate_batches(len(windows), batch_size)]
        if max_batches is not None and len(chunks) > max_batches:
            keep = np.sort(np.random.default_rng(seed).choice(len(chunks), max_batches, replace=False))
            chunks = [chunks[i] for i in keep]
        self.batches = [batch_tensors(windows, idx) for idx in chunks]
        self.cache: dict[tuple[int, ...], float] = {}
        self.n_forward = 0

    @torch.no_grad()
    def buffer(self, genome: Genome) -> EvalBuffer:
        was_training = self.supernet.training
        self.supernet.eval()
        buf = EvalBuffer()
        try:
            for batch in self.batches:
                pred = self.supernet(batch, genome)
                buf.add(pred.numpy(), batch["target"].numpy(), batch["mask"].numpy())
        finally:
            self.supernet.train(was_training)
        return buf

    def __call__(self, genome: Genome) -> float:
        key = tuple(encode(genome))
        if key not in self.cache:
            self.n_forward += 1
            try:
                self.cache[key] = self.buffer(genome).auc()
            except MetricError as exc:
                raise ValueError(f"cannot score genome on this validation subset: {exc}") from exc
        return self.cache[key]


def evaluate(
    supernet: Supernet,
    genome: Genome,
    windows: WindowSet,
    max_batches: int | None = 64,
    batch_size: int = 128,
    seed: int = 0,
) -> FitnessRecord:
    auc = SupernetEvaluator(supernet, windows, max_batches, batch_size, seed)(genome)
    return FitnessRecord(genome, auc)
