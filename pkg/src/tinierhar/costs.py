"""Analytic parameter and MAC accounting.

MAC convention: one multiply paired with an accumulate, counted for
convolutions, dense layers, recurrent projections and attention products.
Biases, batch norm, activations, softmax, pooling, additions and the
elementwise gate products of recurrent cells count zero.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .errors import ConfigurationError
from .functional import conv_output_length
from .models import DEEPCONVLSTM, TINIERHAR, TINYHAR, DeepConvLSTM, ModelSpec, TinyHAR

MAC_CONVENTION = (
    "1 MAC = 1 multiply-accumulate in conv/linear/recurrent/attention products; "
    "bias, batchnorm, activations, softmax, pooling, additions and gate products count 0; "
    "batchnorm running statistics are not parameters"
)


@dataclass
class CostRow:
    layer: str
    params: int
    macs: int


@dataclass
class CostReport:
    architecture: str
    input_shape: Tuple[int, int]
    rows: List[CostRow] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def add(self, layer: str, params: int, macs: int) -> None:
        self.rows.append(CostRow(layer, int(params), int(macs)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {MAC_CONVENTION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "params", "macs"])
        for r in self.rows:
            writer.writerow([r.layer, r.params, r.macs])
        writer.writerow(["total", self.total_params, self.total_macs])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "input_shape": list(self.input_shape),
            "convention": MAC_CONVENTION,
            "rows": [r.__dict__ for r in self.rows],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# per-layer helpers --------------------------------------------------------------

def linear_params(fan_in: int, fan_out: int) -> int:
    return fan_in * fan_out + fan_out


def conv_params(c_in: int, c_out: int, k: int, groups: int = 1, bias: bool = True) -> int:
    return c_out * (c_in // groups) * k + (c_out if bias else 0)


def conv_macs(c_in: int, c_out: int, k: int, t_out: int, groups: int = 1) -> int:
    return c_out * (c_in // groups) * k * t_out


def gru_params(i: int, h: int) -> int:
    """One direction, two bias vectors per gate."""
    return 3 * (i * h + h * h + 2 * h)


def lstm_params(i: int, h: int) -> int:
    return 4 * (i * h + h * h + h)


def dwsep_params(c_in: int, c_out: int, k: int) -> int:
    """Depthwise (no bias) plus pointwise (with bias)."""
    return c_in * k + c_in * c_out + c_out


def standard_conv_params(c_in: int, c_out: int, k: int) -> int:
    return c_in * c_out * k + c_out


# architectures --------------------------------------------------------------------

def _tinierhar(spec: ModelSpec, c: int, t: int, report: CostReport) -> None:
    abl = spec.ablation
    k, nf = spec.kernel_size, spec.filters
    dim, steps = c, t
    if "conv" not in abl:
        pools = [True, True] + [False] * spec.blocks
        c_in = c
        for i, pool in enumerate(pools):
            params = dwsep_params(c_in, nf, k) + 2 * nf  # + batchnorm gamma/beta
            macs = conv_macs(c_in, c_in, k, steps, groups=c_in) + conv_macs(c_in, nf, 1, steps)
            if "shortcut" not in abl and c_in != nf:
                params += c_in * nf + 2 * nf
                macs += conv_macs(c_in, nf, 1, steps)
            report.add(f"blocks.{i}", params, macs)
            if pool:
                steps = (steps - 2) // 2 + 1
            c_in = nf
        dim = nf
    if "gru" not in abl:
        h = spec.hidden
        report.add("gru", 2 * gru_params(dim, h), 2 * steps * 3 * (dim * h + h * h))
        dim = 2 * h
    if "aggregation" not in abl:
        report.add("attention", dim + 1, 2 * steps * dim)
    report.add("classifier", linear_params(dim, spec.classes), dim * spec.classes)


def _deepconvlstm(spec: ModelSpec, c: int, t: int, report: CostReport) -> None:
    abl = spec.ablation
    k, nf = spec.kernel_size, spec.dcl_filters
    dim, steps = c, t
    if "conv" not in abl:
        min_len = DeepConvLSTM.n_conv * (k - 1) + 1
        if t < min_len:
            raise ConfigurationError(f"DeepConvLSTM needs a window of at least {min_len} samples, got {t}")
        for i in range(DeepConvLSTM.n_conv):
            steps = conv_output_length(steps, k, 1, "valid")
            report.add(f"convs.{i}", conv_params(dim, nf, k), conv_macs(dim, nf, k, steps))
            dim = nf
    if "lstm" not in abl:
        h = spec.dcl_hidden
        for i in range(spec.dcl_layers):
            report.add(f"lstms.{i}", lstm_params(dim, h), steps * 4 * (dim * h + h * h))
            dim = h
    report.add("classifier", linear_params(dim, spec.classes), dim * spec.classes)


def _tinyhar(spec: ModelSpec, c: int, t: int, report: CostReport) -> None:
    abl = spec.ablation
    k, nf = spec.kernel_size, spec.tinyhar_filters
    feat, steps = 1, t
    if "conv" not in abl:
        for i, stride in enumerate(TinyHAR.strides[: TinyHAR.n_conv]):
            steps = conv_output_length(steps, k, stride, "same")
            # shared across sensor channels: params once, MACs per channel
            report.add(f"convs.{i}", conv_params(feat, nf, k) + 2 * nf, c * conv_macs(feat, nf, k, steps))
            feat = nf
    if "self_attention" not in abl:
        report.add(
            "attention",
            3 * linear_params(feat, feat),
            steps * (3 * c * feat * feat + 2 * c * c * feat),
        )
    dim = c * feat
    if "fc" not in abl:
        report.add("fc", linear_params(dim, 2 * nf), steps * dim * 2 * nf)
        dim = 2 * nf
    if "lstm" not in abl:
        h = 2 * nf
        report.add("lstm", lstm_params(dim, h), steps * 4 * (dim * h + h * h))
        dim = h
    if "aggregation" not in abl:
        report.add("aggregation", dim + 1, 2 * steps * dim)
    report.add("classifier", linear_params(dim, spec.classes), dim * spec.classes)


_COUNTERS = {TINIERHAR: _tinierhar, DEEPCONVLSTM: _deepconvlstm, TINYHAR: _tinyhar}


def cost_report(spec: ModelSpec, input_shape: Optional[Tuple[int, int]] = None) -> CostReport:
    """Per-layer params and MACs of one unbatched forward pass."""
    c, t = input_shape or spec.input_shape
    if c != spec.channels:
        raise ConfigurationError(f"input has {c} channels but the spec expects {spec.channels}")
    if t < 1:
        raise ConfigurationError(f"invalid window length {t}")
    report = CostReport(spec.architecture, (c, t))
    _COUNTERS[spec.architecture](spec, c, t, report)
    return report


def count_params(spec: ModelSpec) -> CostReport:
    report = cost_report(spec)
    for row in report.rows:
        row.macs = 0
    return report


def count_macs(spec: ModelSpec, input_shape: Optional[Tuple[int, int]] = None) -> CostReport:
    return cost_report(spec, input_shape)


def efficiency_ratios(a: CostReport, b: CostReport, f1_a: float, f1_b: float) -> Tuple[float, float, float]:
    """``(params_a / params_b, macs_a / macs_b, (f1_a - f1_b) / f1_b)``."""
    if b.total_params == 0 or b.total_macs == 0 or f1_b == 0:
        raise ConfigurationError("reference report has a zero total or zero F1")
    return a.total_params / b.total_params, a.total_macs / b.total_macs, (f1_a - f1_b) / f1_b
