"""Genome-driven Transformer: searchable blocks with a global and a local path.

The same module class serves both as the supernet (every candidate operation
instantiated) and as a stand-alone model (only the genome's operations).  The
two share parameter names, so weights copy across by ``state_dict`` key.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .dataset import CONTINUOUS, FEATURES, FeatureVocabulary, WindowSet
from .embedding import ConcatFusion, EmbeddingBank, HierarchicalFusion, pair_slots
from .genome import GO_NAMES, LO_KERNELS, LO_NAMES, Genome, encode
from .nn import CausalConv1d, FeedForward, MaskedMultiheadAttention, PredictionHead

FUSIONS = ("hier", "concat")


@dataclass
class ModelConfig:
    features: tuple[str, ...] = FEATURES
    cardinalities: dict[str, int] = field(default_factory=dict)
    n_blocks: int = 4
    d_model: int = 128
    d_ff: int = 128
    n_heads: int = 8
    window_length: int = 100
    dropout: float = 0.1
    fusion: str = "hier"
    depthwise_conv: bool = False

    def __post_init__(self):
        self.features = tuple(self.features)
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        for name in self.features:
            if name not in CONTINUOUS and name not in self.cardinalities:
                raise ValueError(f"missing cardinality for categorical feature {name!r}")
        if min(self.n_blocks, self.d_model, self.d_ff, self.n_heads, self.window_length) < 1:
            raise ValueError("model sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def num_features(self) -> int:
        return len(self.features)

    @property
    def continuous(self) -> frozenset[str]:
        return CONTINUOUS & frozenset(self.features)

    @classmethod
    def from_vocab(cls, vocab: FeatureVocabulary, features: Sequence[str] = FEATURES, **kw) -> "ModelConfig":
        cards = {f: vocab.cardinality(f) for f in features if f not in CONTINUOUS}
        return cls(features=tuple(features), cardinalities=cards, **kw)

    def to_json(self) -> dict:
        out = asdict(self)
        out["features"] = list(self.features)
        return out


def _global_op(code: int, cfg: ModelConfig) -> nn.Module:
    if code == 1:
        return FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
    return MaskedMultiheadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)


class SearchableBlock(nn.Module):
    """One encoder or decoder block driven by an ``(lo, go1, go2)`` triplet.

    ::

        x1 = LN(X)
        gp = LN(x1 + GO1(x1))           (GO1 = zero: gp = LN(x1))
        gp = gp + MHSA(gp, O_En, O_En)  (decoder only)
        lp = LN(x1 + LO(x1))            (LO = zero: lp = 0)
        h  = lp + gp
        h  = h + GO2(h)                 (GO2 = zero: h)
    """

    def __init__(
        self,
        cfg: ModelConfig,
        decoder: bool,
        lo_ops: Sequence[int] = (1, 2, 3, 4),
        go1_ops: Sequence[int] = (1, 2),
        go2_ops: Sequence[int] = (1, 2),
    ):
        super().__init__()
        D = cfg.d_model
        self.pre_norm = nn.LayerNorm(D)
        self.global_norm = nn.LayerNorm(D)
        self.local = nn.ModuleDict(
            {str(c): CausalConv1d(D, LO_KERNELS[c], cfg.depthwise_conv) for c in sorted(set(lo_ops)) if c}
        )
        self.local_norm = nn.LayerNorm(D) if len(self.local) else None
        self.go1 = nn.ModuleDict({str(c): _global_op(c, cfg) for c in sorted(set(go1_ops)) if c})
        self.go2 = nn.ModuleDict({str(c): _global_op(c, cfg) for c in sorted(set(go2_ops)) if c})
        self.cross = MaskedMultiheadAttention(D, cfg.n_heads, cfg.dropout) if decoder else None
        self.dropout = nn.Dropout(cfg.dropout)

    @staticmethod
    def _run(op: nn.Module, x: Tensor, key_valid: Tensor | None) -> Tensor:
        if isinstance(op, MaskedMultiheadAttention):
            return op(x, x, x, key_valid)
        return op(x)

    def forward(
        self,
        x: Tensor,
        ops: tuple[int, int, int],
        key_valid: Tensor | None = None,
        memory: Tensor | None = None,
    ) -> Tensor:
        lo, go1, go2 = ops
        x1 = self.pre_norm(x)
        if go1:
            gp = self.global_norm(x1 + self.dropout(self._run(self.go1[str(go1)], x1, key_valid)))
        else:
            gp = self.global_norm(x1)
        if self.cross is not None:
            if memory is None:
                raise ValueError("decoder block needs the encoder output")
            gp = gp + self.dropout(self.cross(gp, memory, memory, key_valid))
        h = gp
        if lo:
            h = h + self.local_norm(x1 + self.dropout(self.local[str(lo)](x1)))
        if go2:
            h = h + self.dropout(self._run(self.go2[str(go2)], h, key_valid))
        return h


def _owned_ops(triplets: Sequence[tuple[int, int, int]] | None, i: int) -> dict:
    if triplets is None:
        return {}
    lo, go1, go2 = triplets[i]
    return {"lo_ops": (lo,), "go1_ops": (go1,), "go2_ops": (go2,)}


class SearchableTransformer(nn.Module):
    """Encoder/decoder stack evaluated under any genome.

    With ``genome=None`` every candidate operation is instantiated (the
    supernet); otherwise only what ``genome`` uses.
    """

    def __init__(self, cfg: ModelConfig, genome: Genome | None = None):
        super().__init__()
        self.config = cfg
        num = cfg.num_features
        if genome is not None and (genome.num_features != num or genome.n_blocks != cfg.n_blocks):
            raise ValueError(
                f"genome shape (Num={genome.num_features}, N={genome.n_blocks}) does not match "
                f"config (Num={num}, N={cfg.n_blocks})"
            )
        if genome is None and cfg.fusion != "hier":
            raise ValueError("a supernet always uses hierarchical fusion")
        owned = None
        if genome is not None:
            owned = [f for f, a, b in zip(cfg.features, genome.b_en, genome.b_de) if a or b]
        self.embed = EmbeddingBank(cfg.features, cfg.cardinalities, cfg.d_model, cfg.continuous, owned)

        def fusion(bits):
            if cfg.fusion == "concat":
                return ConcatFusion(num, cfg.d_model, cfg.window_length)
            pairs = None
            if bits is not None:
                pairs = [(i, j) for i, j in pair_slots(num) if bits[i] and bits[j]]
            return HierarchicalFusion(num, cfg.d_model, cfg.window_length, pairs)

        self.encoder_fusion = fusion(genome.b_en if genome is not None else None)
        self.decoder_fusion = fusion(genome.b_de if genome is not None else None)
        enc_t = genome.encoder if genome is not None else None
        dec_t = genome.decoder if genome is not None else None
        self.encoder = nn.ModuleList(
            SearchableBlock(cfg, False, **_owned_ops(enc_t, i)) for i in range(cfg.n_blocks)
        )
        self.decoder = nn.ModuleList(
            SearchableBlock(cfg, True, **_owned_ops(dec_t, i)) for i in range(cfg.n_blocks)
        )
        self.encoder_norm = nn.LayerNorm(cfg.d_model)
        self.decoder_norm = nn.LayerNorm(cfg.d_model)
        self.head = PredictionHead(cfg.d_model)
        self.input_dropout = nn.Dropout(cfg.dropout)

    def _check_batch(self, batch: Mapping[str, Tensor], names: Sequence[str]) -> None:
        mask = batch["mask"]
        if mask.dim() != 2:
            raise ValueError(f"mask must be (batch, L), got shape {tuple(mask.shape)}")
        if mask.shape[1] > self.config.window_length:
            raise ValueError(
                f"window length {mask.shape[1]} exceeds configured {self.config.window_length}"
            )
        for name in names:
            if name not in batch:
                raise ValueError(f"batch lacks feature stream {name!r}")
            if tuple(batch[name].shape) != tuple(mask.shape):
                raise ValueError(
                    f"stream {name!r} has shape {tuple(batch[name].shape)}, expected {tuple(mask.shape)}"
                )

    def logits(self, batch: Mapping[str, Tensor], genome: Genome) -> Tensor:
        cfg = self.config
        names = [f for f, a, b in zip(cfg.features, genome.b_en, genome.b_de) if a or b]
        self._check_batch(batch, names)
        key_valid = batch["mask"]
        emb = self.embed(batch, names)
        x_en = {i: emb[f] for i, f in enumerate(cfg.features) if genome.b_en[i]}
        x_de = {i: emb[f] for i, f in enumerate(cfg.features) if genome.b_de[i]}

        h = self.input_dropout(self.encoder_fusion(x_en))
        for block, ops in zip(self.encoder, genome.encoder):
            h = block(h, ops, key_valid)
        memory = self.encoder_norm(h)

        d = self.input_dropout(self.decoder_fusion(x_de))
        for block, ops in zip(self.decoder, genome.decoder):
            d = block(d, ops, key_valid, memory)
        return self.head.logits(self.decoder_norm(d))

    def forward(self, batch: Mapping[str, Tensor], genome: Genome) -> Tensor:
        return torch.sigmoid(self.logits(batch, genome))


class KTTransformer(SearchableTransformer):
    """A stand-alone model for one fixed genome."""

    def __init__(self, cfg: ModelConfig, genome: Genome):
        super().__init__(cfg, genome)
        self.genome = genome

    def logits(self, batch: Mapping[str, Tensor], genome: Genome | None = None) -> Tensor:
        return super().logits(batch, self.genome if genome is None else genome)

    def forward(self, batch: Mapping[str, Tensor], genome: Genome | None = None) -> Tensor:
        return torch.sigmoid(self.logits(batch, genome))

    def summary(self) -> dict:
        return {
            "genome": encode(self.genome),
            "architecture": self.genome.describe(self.config.features),
            "fusion": self.config.fusion,
            "parameters": count_parameters(self.genome, self.config),
        }


def build(
    genome: Genome,
    cfg: ModelConfig,
    source: nn.Module | Mapping[str, Tensor] | None = None,
) -> KTTransformer:
    """Build the stand-alone model for ``genome``.

    Parameters named identically in ``source`` (a supernet or a state dict)
    are copied in; the rest keep their fresh initialization.
    """
    model = KTTransformer(cfg, genome)
    if source is not None:
        state = source.state_dict() if isinstance(source, nn.Module) else source
        own = model.state_dict()
        with torch.no_grad():
            for name, tensor in own.items():
                if name in state and tuple(state[name].shape) == tuple(tensor.shape):
                    tensor.copy_(state[name])
    return model


def _linear(n_in: int, n_out: int, bias: bool = True) -> int:
    return n_in * n_out + (n_out if bias else 0)


def _op_parameters(kind: str, code: int, cfg: ModelConfig) -> int:
    D = cfg.d_model
    if code == 0:
        return 0
    if kind == "lo":
        k = LO_KERNELS[code]
        return (k * D if cfg.depthwise_conv else k * D * D) + D
    if code == 1:
        return _linear(D, cfg.d_ff) + _linear(cfg.d_ff, D)
    return 4 * _linear(D, D)


def count_parameters(genome: Genome, cfg: ModelConfig) -> int:
    """Trainable scalars used by ``genome`` under ``cfg`` (closed form)."""
    D, L, num = cfg.d_model, cfg.window_length, cfg.num_features
    total = 0
    for f, a, b in zip(cfg.features, genome.b_en, genome.b_de):
        if a or b:
            total += D if f in CONTINUOUS else cfg.cardinalities[f] * D
    n_pairs = num * (num - 1) // 2
    for bits in (genome.b_en, genome.b_de):
        total += L * D
        if cfg.fusion == "concat":
            total += num * D * D
        else:
            k = sum(bits)
            total += k * (k - 1) // 2 * 2 * D * D + n_pairs * D * D
    ln = 2 * D
    for i, (lo, go1, go2) in enumerate(genome.triplets):
        total += 2 * ln  # pre_norm, global_norm
        if lo:
            total += ln + _op_parameters("lo", lo, cfg)
        total += _op_parameters("go", go1, cfg) + _op_parameters("go", go2, cfg)
        if i >= genome.n_blocks:
            total += _op_parameters("go", 2, cfg)  # cross-attention
    total += 2 * ln + _linear(D, 1)
    return total


def batch_tensors(
    windows: WindowSet,
    idx: Sequence[int] | np.ndarray | None = None,
    dtype: torch.dtype = torch.float32,
    features: Sequence[str] = FEATURES,
) -> dict[str, Tensor]:
    """Tensors for ``windows[idx]``: one per feature, plus ``mask`` and ``target``."""
    if idx is None:
        idx = np.arange(len(windows))
    idx = np.asarray(idx)
    out: dict[str, Tensor] = {}
    for name in features:
        arr = windows.features[name][idx]
        if name in CONTINUOUS:
            out[name] = torch.as_tensor(arr, dtype=dtype)
        else:
            out[name] = torch.as_tensor(arr, dtype=torch.long)
    out["mask"] = torch.as_tensor(windows.valid_mask[idx], dtype=torch.bool)
    out["target"] = torch.as_tensor(windows.target[idx], dtype=dtype)
    return out


def describe_ops(triplet: tuple[int, int, int]) -> str:
    lo, go1, go2 = triplet
    return f"({LO_NAMES[lo]}, {GO_NAMES[go1]}, {GO_NAMES[go2]})"
