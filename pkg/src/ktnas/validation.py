"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .dataset import CONTINUOUS, FEATURES, WindowSet
from .genome import Genome, GenomeError


def check_window_set(windows, features=FEATURES, cardinalities: dict[str, int] | None = None) -> WindowSet:
    """Validate shapes, masks and (optionally) categorical index ranges."""
    if not isinstance(windows, WindowSet):
        raise TypeError(f"expected a WindowSet, got {type(windows).__name__}")
    mask = np.asarray(windows.valid_mask)
    if mask.ndim != 2 or mask.dtype != bool:
        raise ValueError(f"valid_mask must be a 2-D bool array, got {mask.dtype} {mask.shape}")
    if len(windows) == 0:
        raise ValueError("window set is empty")
    if windows.target.shape != mask.shape:
        raise ValueError(f"target shape {windows.target.shape} != mask shape {mask.shape}")
    # masks are left-aligned: once padding starts it never stops
    if np.any(~mask[:, :-1] & mask[:, 1:]):
        raise ValueError("valid_mask has a gap: padding must be a right-aligned suffix")
    tgt = windows.target[mask]
    if tgt.size and not np.all((tgt == 0) | (tgt == 1)):
        raise ValueError("targets at valid positions must be 0 or 1")
    for name in features:
        if name not in windows.features:
            raise ValueError(f"missing feature stream {name!r}")
        arr = windows.features[name]
        if arr.shape != mask.shape:
            raise ValueError(f"stream {name!r} has shape {arr.shape}, expected {mask.shape}")
        if name in CONTINUOUS:
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"stream {name!r} contains non-finite values")
        elif cardinalities is not None and name in cardinalities:
            if arr.min() < 0 or arr.max() >= cardinalities[name]:
                raise ValueError(
                    f"stream {name!r} has indices in [{arr.min()}, {arr.max()}], "
                    f"outside [0, {cardinalities[name]})"
                )
    return windows


def check_genome(genome, num_features: int, n_blocks: int) -> Genome:
    if not isinstance(genome, Genome):
        raise TypeError(f"expected a Genome, got {type(genome).__name__}")
    if genome.num_features != num_features or genome.n_blocks != n_blocks:
        raise GenomeError(
            f"genome has Num={genome.num_features}, N={genome.n_blocks}; "
            f"expected Num={num_features}, N={n_blocks}"
        )
    return genome
