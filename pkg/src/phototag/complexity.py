"""Multiply-add and parameter accounting over a resolved layer plan.

Counting conventions (one multiply-add counts as a single op):

* conv ops    = out_h * out_w * out_ch * (kh * kw * in_ch)
* conv params = kh * kw * in_ch * out_ch  (no bias; batchnorm owns the shift)
* fc ops = fc params = in_features * out_features
* batchnorm params = 2 * channels, zero ops
* pooling, relu, spp, dropout: zero ops, zero params
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction

from .arch import ArchSpec, Geometry, HeadConfig, LayerPlan, expand_layers


@dataclass(frozen=True)
class LayerCost:
    index: int
    kind: str
    ops: int
    params: int


@dataclass(frozen=True)
class ComplexityReport:
    per_layer: tuple[LayerCost, ...]
    total_ops: int
    total_params: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("layer,kind,ops,params\n")
        for row in self.per_layer:
            buf.write(f"{row.index},{row.kind},{row.ops},{row.params}\n")
        buf.write(f"total,,{self.total_ops},{self.total_params}\n")
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'layer':>5}  {'kind':<10} {'ops':>14} {'params':>12}"]
        for row in self.per_layer:
            lines.append(f"{row.index:>5}  {row.kind:<10} {row.ops:>14} {row.params:>12}")
        lines.append(f"{'total':>5}  {'':<10} {self.total_ops:>14} {self.total_params:>12}")
        return "\n".join(lines) + "\n"


def count_complexity(plan: LayerPlan) -> ComplexityReport:
    rows = []
    for i, layer in enumerate(plan):
        ops = 0
        params = 0
        if layer.kind == "conv":
            ops = layer.out_h * layer.out_w * layer.out_channels * (layer.kh * layer.kw * layer.in_channels)
            params = layer.kh * layer.kw * layer.in_channels * layer.out_channels
        elif layer.kind == "fc":
            ops = layer.in_channels * layer.out_channels
            params = layer.in_channels * layer.out_channels
        elif layer.kind == "batchnorm":
            params = 2 * layer.out_channels
        rows.append(LayerCost(i, layer.kind, ops, params))
    return ComplexityReport(tuple(rows), sum(r.ops for r in rows), sum(r.params for r in rows))


def factorization_ratio(in_ch: int, out_ch: int, spatial: Geometry | None = None) -> Fraction:
    """Ops of a factored 1x3+3x1 block over a single 3x3 conv.

    Scale-free in the spatial extent (`spatial` accepted for symmetry with the
    direct counts). Exactly 2/3 when in_ch == out_ch.
    """
    factored = 3 * in_ch * out_ch + 3 * out_ch * out_ch
    square = 9 * in_ch * out_ch
    return Fraction(factored, square)


@dataclass(frozen=True)
class RankedArch:
    name: str
    total_ops: int
    total_params: int


def compare_architectures(specs: list[ArchSpec], input: Geometry, head: HeadConfig) -> list[RankedArch]:
    """Rank architectures by total ops, descending; params break exact ties."""
    rows = []
    for spec in specs:
        report = count_complexity(expand_layers(spec, input, head))
        rows.append(RankedArch(spec.name, report.total_ops, report.total_params))
    rows.sort(key=lambda r: (-r.total_ops, -r.total_params, r.name))
    return rows
