import numpy as np
import pytest
import torch

from ktnas.architecture import ModelConfig, batch_tensors
from ktnas.dataset import FEATURES, CONTINUOUS, WindowSet, build_windows, generate_synthetic
from ktnas.genome import Genome

TOY_CARDS = {
    "exer": 11,
    "sk": 5,
    "tag": 7,
    "tagset": 9,
    "bund": 6,
    "ans": 3,
    "cate_ela_s": 302,
    "cate_lag_s": 302,
    "cate_lag_m": 1442,
    "cate_lag_d": 367,
}


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def toy_config(features=FEATURES, **kw):
    base = dict(n_blocks=1, d_model=8, d_ff=8, n_heads=2, window_length=6, dropout=0.0)
    base.update(kw)
    cards = {f: TOY_CARDS[f] for f in features if f not in CONTINUOUS}
    return ModelConfig(features=tuple(features), cardinalities=cards, **base)


def random_windows(n, L, seed=0, cards=TOY_CARDS, pad=True):
    """Random but well-formed WindowSet (right padding, start tokens)."""
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1 if pad else L, L + 1, n)
    mask = np.arange(L)[None, :] < lengths[:, None]
    feats = {}
    for name in FEATURES:
        if name in CONTINUOUS:
            arr = rng.normal(size=(n, L))
        else:
            arr = rng.integers(1, cards[name], (n, L))
        arr = np.where(mask, arr, 0)
        if name in ("ans", "cont_ela", "cate_ela_s", "cont_lag", "cate_lag_s", "cate_lag_m", "cate_lag_d"):
            arr[:, 0] = 0
        feats[name] = arr
    target = np.where(mask, rng.integers(0, 2, (n, L)), 0).astype(np.float64)
    return WindowSet(feats, mask, target, np.array([f"s{i}" for i in range(n)], dtype=object))


def random_batch(n, L, seed=0, dtype=torch.float32, pad=True):
    return batch_tensors(random_windows(n, L, seed, pad=pad), dtype=dtype)


def random_genome(num, n_blocks, rng):
    from ktnas.genome import SearchSpace, sample

    return sample(SearchSpace.initial(num, n_blocks), rng)


@pytest.fixture
def toy_cfg():
    return toy_config()


@pytest.fixture(scope="session")
def synthetic_students():
    recs = generate_synthetic(60, 15, seed=3)
    out = {}
    for r in recs:
        out.setdefault(r.student_id, []).append(r)
    return out


@pytest.fixture(scope="session")
def synthetic_windows(synthetic_students):
    return build_windows(synthetic_students, 10)
