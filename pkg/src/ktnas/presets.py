"""Fixed-genome presets: the vanilla baseline and the ablation variants A-H.

Each preset resolves to a ``(Genome, fusion)`` pair for a given feature list
and block count.  Variants built from a searched architecture take it as
``searched``; the selection-only variants (B, C, D, H) fall back to the
vanilla inputs when no searched genome is supplied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .genome import Genome

VANILLA_TRIPLET = (0, 2, 1)
CONV3_TRIPLET = (1, 2, 1)
VANILLA_ENCODER = ("exer", "sk")
VANILLA_DECODER = ("ans", "cont_ela", "cont_lag")


@dataclass(frozen=True)
class Preset:
    name: str
    alias: str
    inputs: str  # "vanilla", "all", "selected" or "searched"
    blocks: str  # "vanilla", "conv3" or "searched"
    fusion: str
    description: str


PRESETS = {
    p.name: p
    for p in (
        Preset("vanilla", "", "vanilla", "vanilla", "hier", "exercise/skill encoder, response/time decoder, MHSA+FFN blocks"),
        Preset("all-concat", "A", "all", "vanilla", "concat", "every feature, concatenated and projected"),
        Preset("selected-concat", "B", "selected", "vanilla", "concat", "selected features, concatenated"),
        Preset("selected-hier", "C", "selected", "vanilla", "hier", "selected features, hierarchical fusion"),
        Preset("conv3-fixed", "D", "selected", "conv3", "hier", "C's inputs plus a conv3 local path in every block"),
        Preset("searched-concat", "E", "searched", "searched", "concat", "searched architecture with concatenated inputs"),
        Preset("searched-all-features", "F", "all", "searched", "hier", "searched blocks over every feature"),
        Preset("searched-vanilla-input", "G", "vanilla", "searched", "concat", "searched blocks over the vanilla inputs, concatenated"),
        Preset("selected-hier-vanilla-blocks", "H", "selected", "vanilla", "hier", "searched inputs with MHSA+FFN blocks (same as C)"),
        Preset("searched", "", "searched", "searched", "hier", "the searched architecture as found"),
    )
}
ALIASES = {p.alias: p.name for p in PRESETS.values() if p.alias}


def preset_names() -> list[str]:
    return sorted(PRESETS) + sorted(ALIASES)


def _bits(features: Sequence[str], chosen: Sequence[str], label: str) -> tuple[int, ...]:
    bits = tuple(int(f in chosen) for f in features)
    if not any(bits):
        raise ValueError(f"none of the {label} features {list(chosen)} are in the feature list {list(features)}")
    return bits


def resolve(
    name: str,
    features: Sequence[str],
    n_blocks: int,
    searched: Genome | None = None,
) -> tuple[Genome, str]:
    """``(genome, fusion)`` for preset ``name`` (or its letter alias)."""
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {preset_names()}")
    p = PRESETS[key]
    features = tuple(features)
    num = len(features)
    if searched is not None and (searched.num_features != num or searched.n_blocks != n_blocks):
        raise ValueError(
            f"searched genome has Num={searched.num_features}, N={searched.n_blocks}; "
            f"preset needs Num={num}, N={n_blocks}"
        )
    if "searched" in (p.inputs, p.blocks) and searched is None:
        raise ValueError(f"preset {key!r} is built from a searched genome; pass one")

    vanilla = (_bits(features, VANILLA_ENCODER, "encoder"), _bits(features, VANILLA_DECODER, "decoder"))
    if p.inputs == "vanilla":
        b_en, b_de = vanilla
    elif p.inputs == "all":
        b_en = b_de = (1,) * num
    else:
        b_en, b_de = (searched.b_en, searched.b_de) if searched is not None else vanilla

    if p.blocks == "searched":
        triplets = searched.triplets
    else:
        t = VANILLA_TRIPLET if p.blocks == "vanilla" else CONV3_TRIPLET
        triplets = (t,) * (2 * n_blocks)
    return Genome(b_en, b_de, triplets), p.fusion
