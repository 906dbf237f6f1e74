"""Model specifications and builders for TinierHAR, TinyHAR and DeepConvLSTM.

A :class:`ModelSpec` is a declarative, JSON-serialisable description of an
architecture, its input shape and its ablations. Builders turn a spec and a
seed into a :class:`Model` holding initialised parameter tensors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional

import numpy as np

from . import functional as F
from .errors import ConfigurationError, ShapeError
from .layers import (
    AttnAggParams,
    BiGruParams,
    ConvBlockParams,
    ConvParams,
    DwSepBlockParams,
    LinearParams,
    LstmParams,
    SelfAttentionParams,
    attention_aggregate,
    dwsep_block_forward,
    lstm_sequence,
    self_attention,
)
from .tensor import Tensor, getitem, mean, reshape, transpose

TINIERHAR = "tinierhar"
TINYHAR = "tinyhar"
DEEPCONVLSTM = "deepconvlstm"
ARCHITECTURES = (TINIERHAR, TINYHAR, DEEPCONVLSTM)

COMPONENTS: Dict[str, tuple] = {
    TINIERHAR: ("conv", "shortcut", "gru", "aggregation"),
    DEEPCONVLSTM: ("conv", "lstm"),
    TINYHAR: ("conv", "self_attention", "fc", "lstm", "aggregation"),
}

_ALIASES = {"tinierhar": TINIERHAR, "tinyhar": TINYHAR, "deepconvlstm": DEEPCONVLSTM}


def normalize_architecture(name: str) -> str:
    key = name.lower().replace("-", "").replace("_", "")
    try:
        return _ALIASES[key]
    except KeyError:
        raise ConfigurationError(
            f"unknown architecture {name!r}; expected one of {', '.join(ARCHITECTURES)}"
        ) from None


@dataclass(frozen=True)
class ModelSpec:
    """Architecture, input shape and hyperparameters of one model.

    ``blocks`` is M (separable blocks after the two pooling blocks),
    ``filters`` is F (TinierHAR conv width) and ``hidden`` is N (GRU hidden
    size per direction). The ``tinyhar_*`` and ``dcl_*`` fields configure
    the baselines.
    """

    architecture: str
    channels: int
    window: int
    classes: int
    blocks: int = 4
    filters: int = 16
    hidden: int = 16
    kernel_size: int = 5
    ablation: FrozenSet[str] = field(default_factory=frozenset)
    tinyhar_filters: int = 20
    dcl_filters: int = 64
    dcl_hidden: int = 128
    dcl_layers: int = 2

    def __post_init__(self):
        object.__setattr__(self, "architecture", normalize_architecture(self.architecture))
        object.__setattr__(self, "ablation", frozenset(self.ablation))
        if self.blocks < 0 or self.filters < 1 or self.hidden < 1:
            raise ConfigurationError(
                f"need blocks >= 0, filters >= 1, hidden >= 1 (got {self.blocks}, {self.filters}, {self.hidden})"
            )
        if self.classes < 2:
            raise ConfigurationError(f"need at least 2 classes, got {self.classes}")
        if self.channels < 1 or self.window < 1:
            raise ConfigurationError(f"invalid input shape ({self.channels}, {self.window})")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd and positive, got {self.kernel_size}")
        legal = COMPONENTS[self.architecture]
        unknown = sorted(self.ablation - set(legal))
        if unknown:
            raise ConfigurationError(
                f"unknown component(s) {unknown} for {self.architecture}; legal: {', '.join(legal)}"
            )

    @property
    def input_shape(self) -> tuple:
        return (self.channels, self.window)

    def with_input(self, channels: int, window: int, classes: Optional[int] = None) -> "ModelSpec":
        return replace(self, channels=channels, window=window, classes=classes or self.classes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablation"] = sorted(self.ablation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["ablation"] = frozenset(d.get("ablation", ()))
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


def default_spec(architecture: str, channels: int, window: int, classes: int, **overrides) -> ModelSpec:
    """Shipped configuration (M=4, F=16, N=16 for TinierHAR)."""
    return ModelSpec(architecture, channels, window, classes, **overrides)


def legal_components(architecture: str) -> tuple:
    return COMPONENTS[normalize_architecture(architecture)]


def ablate(spec: ModelSpec, component: str) -> ModelSpec:
    """Return ``spec`` with ``component`` removed (idempotent)."""
    legal = COMPONENTS[spec.architecture]
    if component not in legal:
        raise ConfigurationError(
            f"unknown component {component!r} for {spec.architecture}; legal: {', '.join(legal)}"
        )
    return replace(spec, ablation=spec.ablation | {component})


# models -----------------------------------------------------------------------

class Model:
    """Base class: named parameter registry, buffers and batched forward."""

    spec: ModelSpec

    def groups(self) -> Iterable[tuple]:
        raise NotImplementedError

    def named_parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for name, group in self.groups():
            if isinstance(group, list):
                for i, item in enumerate(group):
                    out.update(item.named_parameters(f"{name}.{i}."))
            else:
                out.update(group.named_parameters(name + "."))
        return out

    def named_buffers(self) -> Dict[str, F.RunningStats]:
        out: Dict[str, F.RunningStats] = {}
        for name, group in self.groups():
            items = group if isinstance(group, list) else [group]
            for i, item in enumerate(items):
                prefix = f"{name}.{i}." if isinstance(group, list) else name + "."
                out.update(item.named_buffers(prefix))
        return out

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def _check_input(self, x: Tensor) -> tuple:
        if x.ndim == 2:
            x = reshape(x, (1,) + x.shape)
            squeeze = True
        elif x.ndim == 3:
            squeeze = False
        else:
            raise ShapeError(f"layer 'input': expected [C, T] or [B, C, T], got {x.shape}")
        if x.shape[1] != self.spec.channels:
            raise ShapeError(
                f"layer 'input': model expects {self.spec.channels} channels, batch has {x.shape[1]}"
            )
        return x, squeeze

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        xb, squeeze = self._check_input(x)
        logits = self._forward(xb, training)
        return reshape(logits, logits.shape[1:]) if squeeze else logits

    __call__ = forward

    def _forward(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError


class TinierHAR(Model):
    """Residual separable CNN -> bidirectional GRU -> attention -> classifier."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        abl = spec.ablation
        shortcut = "shortcut" not in abl
        k = spec.kernel_size
        self.blocks: List[DwSepBlockParams] = []
        dim = spec.channels
        if "conv" not in abl:
            self.blocks.append(DwSepBlockParams.init(rng, spec.channels, spec.filters, k, True, shortcut))
            self.blocks.append(DwSepBlockParams.init(rng, spec.filters, spec.filters, k, True, shortcut))
            for _ in range(spec.blocks):
                self.blocks.append(DwSepBlockParams.init(rng, spec.filters, spec.filters, k, False, shortcut))
            dim = spec.filters
        self.gru: Optional[BiGruParams] = None
        if "gru" not in abl:
            self.gru = BiGruParams.init(rng, dim, spec.hidden)
            dim = 2 * spec.hidden
        self.attention: Optional[AttnAggParams] = None
        if "aggregation" not in abl:
            self.attention = AttnAggParams.init(rng, dim)
        self.classifier = LinearParams.init(rng, dim, spec.classes)

    def groups(self):
        yield "blocks", self.blocks
        if self.gru is not None:
            yield "gru", self.gru
        if self.attention is not None:
            yield "attention", self.attention
        yield "classifier", self.classifier

    def _forward(self, x: Tensor, training: bool) -> Tensor:
        h = x
        for block in self.blocks:
            h = dwsep_block_forward(h, block, training)
        seq = transpose(h, (0, 2, 1))  # [B, T', D]: one step per time index
        if self.gru is not None:
            seq = self.gru(seq)
        feat = attention_aggregate(seq, self.attention) if self.attention is not None else mean(seq, axis=1)
        return self.classifier(feat)


class DeepConvLSTM(Model):
    """Four valid K=5 convolutions over time, stacked LSTMs, last-step classifier."""

    n_conv = 4

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        abl = spec.ablation
        self.convs: List[ConvParams] = []
        dim = spec.channels
        if "conv" not in abl:
            min_len = self.n_conv * (spec.kernel_size - 1) + 1
            if spec.window < min_len:
                raise ConfigurationError(
                    f"DeepConvLSTM needs a window of at least {min_len} samples, got {spec.window}"
                )
            for _ in range(self.n_conv):
                self.convs.append(ConvParams.init(rng, dim, spec.dcl_filters, spec.kernel_size))
                dim = spec.dcl_filters
        self.lstms: List[LstmParams] = []
        if "lstm" not in abl:
            for _ in range(spec.dcl_layers):
                self.lstms.append(LstmParams.init(rng, dim, spec.dcl_hidden))
                dim = spec.dcl_hidden
        self.classifier = LinearParams.init(rng, dim, spec.classes)

    def groups(self):
        yield "convs", self.convs
        yield "lstms", self.lstms
        yield "classifier", self.classifier

    def _forward(self, x: Tensor, training: bool) -> Tensor:
        h = x
        for conv in self.convs:
            h = conv(h)
        seq = transpose(h, (0, 2, 1))
        if self.lstms:
            for lstm in self.lstms:
                seq = lstm_sequence(seq, lstm)
            feat = getitem(seq, (slice(None), seq.shape[1] - 1))
        else:
            feat = mean(seq, axis=1)
        return self.classifier(feat)


class TinyHAR(Model):
    """Per-channel temporal convs, cross-channel attention and fusion, LSTM, aggregation."""

    n_conv = 4
    strides = (2, 2, 1, 1)

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        abl = spec.ablation
        nf = spec.tinyhar_filters
        self.convs: List[ConvBlockParams] = []
        feat = 1
        if "conv" not in abl:
            for i in range(self.n_conv):
                self.convs.append(ConvBlockParams.init(rng, feat, nf, spec.kernel_size, self.strides[i]))
                feat = nf
        self.attention: Optional[SelfAttentionParams] = None
        if "self_attention" not in abl:
            self.attention = SelfAttentionParams.init(rng, feat)
        dim = spec.channels * feat
        self.fc: Optional[LinearParams] = None
        if "fc" not in abl:
            self.fc = LinearParams.init(rng, dim, 2 * nf)
            dim = 2 * nf
        self.lstm: Optional[LstmParams] = None
        if "lstm" not in abl:
            self.lstm = LstmParams.init(rng, dim, 2 * nf)
            dim = 2 * nf
        self.aggregation: Optional[AttnAggParams] = None
        if "aggregation" not in abl:
            self.aggregation = AttnAggParams.init(rng, dim)
        self.classifier = LinearParams.init(rng, dim, spec.classes)

    def groups(self):
        yield "convs", self.convs
        for name in ("attention", "fc", "lstm", "aggregation"):
            group = getattr(self, name)
            if group is not None:
                yield name, group
        yield "classifier", self.classifier

    def _forward(self, x: Tensor, training: bool) -> Tensor:
        b, c, t = x.shape
        h = reshape(x, (b * c, 1, t))  # every sensor channel convolved independently
        for conv in self.convs:
            h = conv(h, training)
        nf, tp = h.shape[1], h.shape[2]
        h = transpose(reshape(h, (b, c, nf, tp)), (0, 3, 1, 2))  # [B, T', C, F]
        if self.attention is not None:
            h = reshape(self_attention(reshape(h, (b * tp, c, nf)), self.attention), (b, tp, c, nf))
        seq = reshape(h, (b, tp, c * nf))
        if self.fc is not None:
            seq = F.relu(self.fc(seq))
        if self.lstm is not None:
            seq = lstm_sequence(seq, self.lstm)
        feat = attention_aggregate(seq, self.aggregation) if self.aggregation is not None else mean(seq, axis=1)
        return self.classifier(feat)


_BUILDERS = {TINIERHAR: TinierHAR, TINYHAR: TinyHAR, DEEPCONVLSTM: DeepConvLSTM}


def _build(spec: ModelSpec, arch: str, seed: int) -> Model:
    if spec.architecture != arch:
        raise ConfigurationError(f"spec describes {spec.architecture}, not {arch}")
    return _BUILDERS[arch](spec, np.random.default_rng(seed))


def build_tinierhar(spec: ModelSpec, seed: int = 0) -> TinierHAR:
    return _build(spec, TINIERHAR, seed)


def build_tinyhar(spec: ModelSpec, seed: int = 0) -> TinyHAR:
    return _build(spec, TINYHAR, seed)


def build_deepconvlstm(spec: ModelSpec, seed: int = 0) -> DeepConvLSTM:
    return _build(spec, DEEPCONVLSTM, seed)


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Build any architecture; parameters are drawn from ``default_rng(seed)``."""
    return _build(spec, spec.architecture, seed)


def forward(model: Model, batch, training: bool = False) -> Tensor:
    return model.forward(batch, training)
