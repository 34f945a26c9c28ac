import json

import numpy as np
import pytest
import torch

from ktnas.architecture import KTTransformer
from ktnas.checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from ktnas.genome import Genome
from ktnas.training import (
    TrainConfig,
    fit_model,
    iterate_batches,
    noam_factor,
    noam_rate,
    predict_proba,
)

from conftest import random_windows, toy_config


class TestCheckpoint:
    def test_byte_exact_round_trip(self, tmp_path):
        torch.manual_seed(0)
        tensors = {"a": torch.randn(3, 4), "b.c": torch.randn(5), "scalar": torch.tensor(2.5)}
        save_checkpoint(tmp_path / "c1", tensors, {"epoch": 3})
        back, meta = load_checkpoint(tmp_path / "c1")
        assert meta == {"epoch": 3}
        for k, v in tensors.items():
            assert back[k].numpy().tobytes() == v.numpy().tobytes()
        save_checkpoint(tmp_path / "c2", back, meta)
        for f in ("weights.bin", "manifest.json"):
            assert (tmp_path / "c1" / f).read_bytes() == (tmp_path / "c2" / f).read_bytes()

    def test_manifest_layout(self, tmp_path):
        save_checkpoint(tmp_path, {"x": torch.ones(2, 3), "y": torch.zeros(4)})
        m = read_manifest(tmp_path)
        assert m["byteorder"] == "little"
        assert [(e["name"], e["shape"], e["offset"], e["nbytes"]) for e in m["tensors"]] == [
            ("x", [2, 3], 0, 24),
            ("y", [4], 24, 16),
        ]
        raw = (tmp_path / "weights.bin").read_bytes()
        assert np.frombuffer(raw[:24], "<f4").tolist() == [1.0] * 6

    def test_missing_and_truncated(self, tmp_path):
        with pytest.raises(CheckpointError, match="manifest"):
            load_checkpoint(tmp_path / "none")
        save_checkpoint(tmp_path, {"x": torch.ones(8)})
        (tmp_path / "weights.bin").write_bytes(b"\0" * 8)
        with pytest.raises(CheckpointError, match="past the end"):
            load_checkpoint(tmp_path)

    def test_wrong_format(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}))
        with pytest.raises(CheckpointError, match="format"):
            read_manifest(tmp_path)


class TestNoam:
    def test_peak_at_warmup(self):
        d, w, peak = 32, 50, 1e-3
        f = noam_factor(peak, d, w)
        rates = [noam_rate(s, d, w, f) for s in range(1, 300)]
        assert int(np.argmax(rates)) + 1 == w
        assert max(rates) == pytest.approx(peak, rel=1e-12)

    def test_closed_form(self):
        assert noam_rate(10, 16, 100) == pytest.approx(16**-0.5 * 10 * 100**-1.5)
        assert noam_rate(400, 16, 100) == pytest.approx(16**-0.5 * 400**-0.5)

    def test_batches_cover_once(self):
        idx = np.concatenate(list(iterate_batches(10, 3, np.random.default_rng(0))))
        assert sorted(idx.tolist()) == list(range(10))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestFitModel:
    def test_history_and_checkpoint(self, tmp_path):
        cfg = toy_config()
        torch.manual_seed(0)
        model = KTTransformer(cfg, Genome.uniform([1] * 12, [1] * 12, (1, 2, 1), 1))
        train, val = random_windows(20, 6, seed=1), random_windows(10, 6, seed=2)
        hist = fit_model(model, train, TrainConfig(epochs=2, batch_size=8, warmup=3), val, tmp_path)
        assert [h["epoch"] for h in hist] == [1, 2]
        assert 0.0 <= hist[-1]["val_auc"] <= 1.0
        assert read_manifest(tmp_path)["meta"]["epoch"] == 2
        pred = predict_proba(model, val)
        assert pred.shape == (10, 6) and np.all((pred > 0) & (pred < 1))

    def test_resume(self, tmp_path):
        cfg = toy_config(dropout=0.1)
        g = Genome.uniform([1] * 12, [1] * 12, (2, 2, 1), 1)
        train = random_windows(16, 6, seed=3)
        tc = TrainConfig(epochs=2, batch_size=8, warmup=3, seed=2)
        torch.manual_seed(0)
        full = KTTransformer(cfg, g)
        fit_model(full, train, tc)
        torch.manual_seed(0)
        part = KTTransformer(cfg, g)
        fit_model(part, train, TrainConfig(**{**tc.to_json(), "epochs": 1}), checkpoint_dir=tmp_path)
        resumed = KTTransformer(cfg, g)
        fit_model(resumed, train, tc, checkpoint_dir=tmp_path, resume=True)
        for a, b in zip(full.parameters(), resumed.parameters()):
            assert torch.equal(a, b)
