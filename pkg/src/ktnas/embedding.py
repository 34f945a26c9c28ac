"""Feature embeddings and the selective hierarchical input fusion."""

from __future__ import annotations

from itertools import combinations
from typing import Mapping, Sequence

import torch
from torch import Tensor, nn


def pair_slots(num_features: int) -> list[tuple[int, int]]:
    """Canonical (lexicographic) order of unordered feature pairs, 0-based."""
    return list(combinations(range(num_features), 2))


def _pair_key(i: int, j: int) -> str:
    return f"{i}_{j}"


class EmbeddingBank(nn.Module):
    """One table per feature: ``nn.Embedding`` for categorical streams and a
    bias-free ``1 -> D`` linear map for continuous ones.

    ``owned`` restricts which tables exist (a stand-alone model only keeps the
    tables its selection vectors use).
    """

    def __init__(
        self,
        features: Sequence[str],
        cardinalities: Mapping[str, int],
        d_model: int,
        continuous: frozenset[str] = frozenset(),
        owned: Sequence[str] | None = None,
    ):
        super().__init__()
        self.features = tuple(features)
        self.continuous = frozenset(continuous)
        self.tables = nn.ModuleDict()
        for name in owned if owned is not None else self.features:
            if name in self.continuous:
                self.tables[name] = nn.Linear(1, d_model, bias=False)
            else:
                self.tables[name] = nn.Embedding(cardinalities[name], d_model)

    def embed_one(self, name: str, values: Tensor) -> Tensor:
        table = self.tables[name]
        if name in self.continuous:
            return values.unsqueeze(-1).to(table.weight.dtype) * table.weight[:, 0]
        if values.numel() and (values.min() < 0 or values.max() >= table.num_embeddings):
            raise IndexError(
                f"{name}: index out of range [0, {table.num_embeddings}) "
                f"(got min {int(values.min())}, max {int(values.max())})"
            )
        return table(values)

    def forward(self, streams: Mapping[str, Tensor], names: Sequence[str] | None = None) -> dict[str, Tensor]:
        names = self.features if names is None else names
        return {name: self.embed_one(name, streams[name]) for name in names}


def check_selection(bits: Sequence[int], num_features: int, label: str = "selection") -> None:
    if len(bits) != num_features:
        raise ValueError(f"{label} has length {len(bits)}, expected {num_features}")
    if any(b not in (0, 1) for b in bits):
        raise ValueError(f"{label} must be binary")
    if sum(bits) < 1:
        raise ValueError(f"{label} must select at least one feature")


def select(
    embeddings: Sequence[Tensor], b_en: Sequence[int], b_de: Sequence[int]
) -> tuple[dict[int, Tensor], dict[int, Tensor]]:
    """Subsets keyed by slot index (0-based), so feature identity survives."""
    check_selection(b_en, len(embeddings), "b_En")
    check_selection(b_de, len(embeddings), "b_De")
    x_en = {i: e for i, (e, b) in enumerate(zip(embeddings, b_en)) if b}
    x_de = {i: e for i, (e, b) in enumerate(zip(embeddings, b_de)) if b}
    return x_en, x_de


class HierarchicalFusion(nn.Module):
    """Pairwise tanh fusion into a fixed-size slot vector, then a linear map.

    Every unordered pair ``(i, j)`` has its own bias-free ``2D -> D`` map; pairs
    touching an unselected feature contribute a zero slot, so the output map
    ``W_out`` (``P*D -> D`` for ``P = Num(Num-1)/2``) never changes shape.  A
    learned positional embedding is added to the result.
    """

    def __init__(
        self,
        num_features: int,
        d_model: int,
        window_length: int,
        pairs: Sequence[tuple[int, int]] | None = None,
    ):
        super().__init__()
        self.num_features = num_features
        self.d_model = d_model
        self.slots = pair_slots(num_features)
        owned = self.slots if pairs is None else pairs
        self.pair_maps = nn.ModuleDict(
            {_pair_key(i, j): nn.Linear(2 * d_model, d_model, bias=False) for i, j in owned}
        )
        # a single feature has no pairs and therefore no output map
        self.out = nn.Linear(len(self.slots) * d_model, d_model, bias=False) if self.slots else None
        self.position = nn.Embedding(window_length, d_model)

    def temporaries(self, selected: Mapping[int, Tensor]) -> list[Tensor]:
        """All pair slots in canonical order; unselected pairs are zero blocks."""
        if not selected:
            raise ValueError("at least one embedding must be selected")
        ref = next(iter(selected.values()))
        zero = ref.new_zeros(ref.shape[:-1] + (self.d_model,))
        out = []
        for i, j in self.slots:
            if i in selected and j in selected:
                pair = torch.cat([selected[i], selected[j]], dim=-1)
                out.append(torch.tanh(self.pair_maps[_pair_key(i, j)](pair)))
            else:
                out.append(zero)
        return out

    def forward(self, selected: Mapping[int, Tensor]) -> Tensor:
        temps = self.temporaries(selected)
        ref = next(iter(selected.values()))
        L = ref.shape[-2]
        pos = self.position.weight[:L]
        if not temps:
            return pos.expand(ref.shape[:-1] + (self.d_model,))
        return self.out(torch.cat(temps, dim=-1)) + pos


class ConcatFusion(nn.Module):
    """Plain concatenation of the ``Num`` embedding slots (unselected slots
    zero) followed by a bias-free ``Num*D -> D`` map and positions."""

    def __init__(self, num_features: int, d_model: int, window_length: int):
        super().__init__()
        self.num_features = num_features
        self.d_model = d_model
        self.out = nn.Linear(num_features * d_model, d_model, bias=False)
        self.position = nn.Embedding(window_length, d_model)

    def forward(self, selected: Mapping[int, Tensor]) -> Tensor:
        if not selected:
            raise ValueError("at least one embedding must be selected")
        ref = next(iter(selected.values()))
        zero = ref.new_zeros(ref.shape)
        parts = [selected.get(i, zero) for i in range(self.num_features)]
        return self.out(torch.cat(parts, dim=-1)) + self.position.weight[: ref.shape[-2]]
