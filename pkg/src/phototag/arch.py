"""Architecture notation: parsing, canonical rendering, and layer expansion.

The notation describes a linear chain of stages separated by ';'. Within a
stage, blocks are joined by '+'. A conv block is written ``(filter,channels)``
with optional ``/stride`` and ``xrepeat`` suffixes; a pooling block is written
``window/stride``. Filters are either square (``3``) or a factored pair
(``1x3+3x1``). ASCII 'x' and the multiplication sign are interchangeable and
whitespace is insignificant.

Example::

    yfnet-d: (7,64)/2+3/3;(1x3+3x1,128)x2+2/2;(1x3+3x1,256)x3+3/3;(1x3+3x1,512)x2+(1x3+3x1,256)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


class ArchError(ValueError):
    """Base class for architecture notation errors."""


class ArchSyntaxError(ArchError):
    """Malformed notation. Carries the character offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class GeometryError(ArchError):
    """Layer expansion collapsed the spatial extent to zero."""


@dataclass(frozen=True)
class SquareFilter:
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ArchError("zero filter size")


@dataclass(frozen=True)
class FactoredFilter:
    """Two sub-filters applied in notation order (e.g. 1x3 then 3x1)."""

    first_h: int
    first_w: int
    second_h: int
    second_w: int

    def __post_init__(self):
        if min(self.first_h, self.first_w, self.second_h, self.second_w) < 1:
            raise ArchError("zero filter size")


FilterShape = Union[SquareFilter, FactoredFilter]


@dataclass(frozen=True)
class ConvBlock:
    filter: FilterShape
    channels: int
    stride: int = 1
    repeat: int = 1  # repeated layers do not share weights

    def __post_init__(self):
        if self.channels < 1:
            raise ArchError("zero channels")
        if self.stride < 1 or self.repeat < 1:
            raise ArchError("stride and repeat must be >= 1")


@dataclass(frozen=True)
class PoolBlock:
    window: int
    stride: int

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ArchError("pool window and stride must be >= 1")


Block = Union[ConvBlock, PoolBlock]


@dataclass(frozen=True)
class ArchSpec:
    name: str
    stages: tuple[tuple[Block, ...], ...]

    def __post_init__(self):
        if not self.stages or not all(self.stages):
            raise ArchError("architecture needs at least one non-empty stage")
        first = self.stages[0][0]
        if not isinstance(first, ConvBlock):
            raise ArchError("first block of stage 1 must be a conv block")


@dataclass(frozen=True)
class Geometry:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise ArchError("input geometry must be positive")


@dataclass(frozen=True)
class HeadConfig:
    """Classifier head: pyramid pooling levels, hidden widths, dropout, classes."""

    spp_levels: tuple[int, ...] = (6, 3, 2, 1)
    hidden_fc_widths: tuple[int, ...] = (4096, 4096)
    dropout_rate: float = 0.2
    num_classes: int = 1000

    def __post_init__(self):
        if not self.spp_levels or min(self.spp_levels) < 1:
            raise ArchError("spp levels must be a non-empty list of positive ints")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ArchError("dropout rate must be in [0, 1)")
        if self.num_classes < 2:
            raise ArchError("num_classes must be >= 2")
        if any(w < 1 for w in self.hidden_fc_widths):
            raise ArchError("fc widths must be positive")

    @property
    def spp_bins(self) -> int:
        return sum(l * l for l in self.spp_levels)


@dataclass(frozen=True)
class PlanLayer:
    """One resolved layer: kind plus concrete channel and spatial geometry."""

    kind: str  # conv | pool | spp | fc | batchnorm | relu | dropout
    in_channels: int
    out_channels: int
    in_h: int
    in_w: int
    out_h: int
    out_w: int
    kh: int = 0
    kw: int = 0
    stride: int = 1
    padding: str = ""  # 'valid' | 'same' for conv, '' otherwise
    spp_levels: tuple[int, ...] = ()
    dropout_rate: float = 0.0


LayerPlan = list[PlanLayer]


# ---------------------------------------------------------------------------
# Parsing

class _Scanner:
    """Character scanner over notation text; skips whitespace, keeps offsets."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self._skip_ws()
        if self.pos >= len(self.text):
            return ""
        ch = self.text[self.pos]
        return "x" if ch == "×" else ch

    def take(self) -> str:
        ch = self.peek()
        if ch:
            self.pos += 1
        return ch

    def expect(self, ch: str):
        got = self.take()
        if got != ch:
            raise ArchSyntaxError(f"expected {ch!r}, found {got!r}" if got else f"expected {ch!r}, found end of text", self.pos - (1 if got else 0))

    def integer(self) -> int:
        self._skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            raise ArchSyntaxError("expected an integer", start)
        return int(self.text[start:self.pos])

    def done(self) -> bool:
        self._skip_ws()
        return self.pos >= len(self.text)


def _parse_filter(sc: _Scanner) -> FilterShape:
    start = sc.pos
    a = sc.integer()
    if sc.peek() != "x":
        if a < 1:
            raise ArchSyntaxError("zero filter size", start)
        return SquareFilter(a)
    sc.take()
    b = sc.integer()
    sc.expect("+")
    c = sc.integer()
    sc.expect("x")
    d = sc.integer()
    if min(a, b, c, d) < 1:
        raise ArchSyntaxError("zero filter size", start)
    return FactoredFilter(a, b, c, d)


def _parse_conv(sc: _Scanner) -> ConvBlock:
    sc.expect("(")
    filt = _parse_filter(sc)
    sc.expect(",")
    ch_start = sc.pos
    channels = sc.integer()
    if channels < 1:
        raise ArchSyntaxError("zero channels", ch_start)
    sc.expect(")")
    stride = 1
    repeat = 1
    if sc.peek() == "/":
        sc.take()
        stride = sc.integer()
    if sc.peek() == "x":
        sc.take()
        repeat = sc.integer()
    return ConvBlock(filt, channels, stride, repeat)


def _parse_pool(sc: _Scanner) -> PoolBlock:
    window = sc.integer()
    sc.expect("/")
    stride = sc.integer()
    return PoolBlock(window, stride)


def _parse_block(sc: _Scanner) -> Block:
    ch = sc.peek()
    if ch == "(":
        return _parse_conv(sc)
    if ch.isdigit():
        return _parse_pool(sc)
    raise ArchSyntaxError(f"expected a block, found {ch!r}" if ch else "expected a block, found end of text", sc.pos)


def parse_arch(name: str, text: str) -> ArchSpec:
    """Parse stage-row notation (stages separated by ';') into an ArchSpec."""
    sc = _Scanner(text)
    stages: list[tuple[Block, ...]] = []
    while True:
        blocks = [_parse_block(sc)]
        while sc.peek() == "+":
            sc.take()
            blocks.append(_parse_block(sc))
        stages.append(tuple(blocks))
        if sc.peek() == ";":
            sc.take()
            continue
        break
    if not sc.done():
        raise ArchSyntaxError(f"unexpected character {sc.peek()!r}", sc.pos)
    return ArchSpec(name, tuple(stages))


def parse_arch_file(text: str) -> ArchSpec:
    """Parse the file form ``name ':' stages``."""
    head, sep, body = text.partition(":")
    if not sep:
        raise ArchSyntaxError("expected 'name: stages'", 0)
    return parse_arch(head.strip(), body)


# ---------------------------------------------------------------------------
# Rendering

def _render_filter(f: FilterShape) -> str:
    if isinstance(f, SquareFilter):
        return str(f.size)
    return f"{f.first_h}x{f.first_w}+{f.second_h}x{f.second_w}"


def _render_block(b: Block) -> str:
    if isinstance(b, PoolBlock):
        return f"{b.window}/{b.stride}"
    out = f"({_render_filter(b.filter)},{b.channels})"
    if b.stride != 1:
        out += f"/{b.stride}"
    if b.repeat != 1:
        out += f"x{b.repeat}"
    return out


def render_arch(spec: ArchSpec) -> str:
    """Canonical stage text: defaults elided, no whitespace, ASCII 'x'."""
    return ";".join("+".join(_render_block(b) for b in stage) for stage in spec.stages)


def render_arch_file(spec: ArchSpec) -> str:
    return f"{spec.name}: {render_arch(spec)}\n"


# ---------------------------------------------------------------------------
# Expansion

def _conv_out(size: int, k: int, stride: int, padding: str) -> int:
    pad_total = k - 1 if padding == "same" else 0
    return (size + pad_total - k) // stride + 1


def expand_layers(spec: ArchSpec, input: Geometry, head: HeadConfig) -> LayerPlan:
    """Resolve an ArchSpec into a concrete layer list.

    Padding rule: the first conv of the network is unpadded; every later conv
    pads to preserve spatial size at stride 1; pooling keeps only full
    windows (floor division of valid positions). Factored blocks expand to
    two conv layers, both with the block's output channel count, in notation
    order. Every conv and hidden fc is followed by batchnorm and relu; the
    final logits fc stands alone.
    """
    plan: LayerPlan = []
    h, w, c = input.height, input.width, input.channels
    first_conv = True

    def add_conv(kh: int, kw: int, out_ch: int, stride: int):
        nonlocal h, w, c, first_conv
        padding = "valid" if first_conv else "same"
        first_conv = False
        oh = _conv_out(h, kh, stride, padding)
        ow = _conv_out(w, kw, stride, padding)
        if oh < 1 or ow < 1:
            raise GeometryError(f"conv {kh}x{kw}/{stride} collapses {h}x{w} to zero")
        plan.append(PlanLayer("conv", c, out_ch, h, w, oh, ow, kh, kw, stride, padding))
        plan.append(PlanLayer("batchnorm", out_ch, out_ch, oh, ow, oh, ow))
        plan.append(PlanLayer("relu", out_ch, out_ch, oh, ow, oh, ow))
        h, w, c = oh, ow, out_ch

    for stage in spec.stages:
        for block in stage:
            if isinstance(block, ConvBlock):
                for _ in range(block.repeat):
                    f = block.filter
                    if isinstance(f, SquareFilter):
                        add_conv(f.size, f.size, block.channels, block.stride)
                    else:
                        add_conv(f.first_h, f.first_w, block.channels, block.stride)
                        add_conv(f.second_h, f.second_w, block.channels, 1)
            else:
                oh = (h - block.window) // block.stride + 1
                ow = (w - block.window) // block.stride + 1
                if oh < 1 or ow < 1:
                    raise GeometryError(f"pool {block.window}/{block.stride} collapses {h}x{w} to zero")
                plan.append(PlanLayer("pool", c, c, h, w, oh, ow, block.window, block.window, block.stride))
                h, w = oh, ow

    features = c * head.spp_bins
    plan.append(PlanLayer("spp", c, features, h, w, 1, 1, spp_levels=tuple(head.spp_levels)))
    in_f = features
    for width in head.hidden_fc_widths:
        plan.append(PlanLayer("fc", in_f, width, 1, 1, 1, 1))
        plan.append(PlanLayer("batchnorm", width, width, 1, 1, 1, 1))
        plan.append(PlanLayer("relu", width, width, 1, 1, 1, 1))
        plan.append(PlanLayer("dropout", width, width, 1, 1, 1, 1, dropout_rate=head.dropout_rate))
        in_f = width
    plan.append(PlanLayer("fc", in_f, head.num_classes, 1, 1, 1, 1))

    prev_out = input.channels
    for layer in plan:
        assert layer.in_channels == prev_out, "channel chain broken"
        prev_out = layer.out_channels
    return plan


def spec_to_dict(spec: ArchSpec) -> dict:
    """JSON-friendly form of an ArchSpec (used by the CLI parse output)."""
    stages = []
    for stage in spec.stages:
        rows = []
        for b in stage:
            if isinstance(b, PoolBlock):
                rows.append({"kind": "pool", "window": b.window, "stride": b.stride})
            else:
                f = b.filter
                if isinstance(f, SquareFilter):
                    filt = {"square": f.size}
                else:
                    filt = {"factored": [f.first_h, f.first_w, f.second_h, f.second_w]}
                rows.append({"kind": "conv", "filter": filt, "channels": b.channels,
                             "stride": b.stride, "repeat": b.repeat})
        stages.append(rows)
    return {"name": spec.name, "stages": stages}


def spec_from_dict(data: dict) -> ArchSpec:
    stages = []
    for stage in data["stages"]:
        blocks: list[Block] = []
        for row in stage:
            if row["kind"] == "pool":
                blocks.append(PoolBlock(row["window"], row["stride"]))
            else:
                filt = row["filter"]
                f: FilterShape = SquareFilter(filt["square"]) if "square" in filt else FactoredFilter(*filt["factored"])
                blocks.append(ConvBlock(f, row["channels"], row["stride"], row["repeat"]))
        stages.append(tuple(blocks))
    return ArchSpec(data["name"], tuple(stages))


def stage_end_sizes(spec: ArchSpec, input: Geometry) -> list[int]:
    """Spatial height at the end of each stage (square inputs assumed)."""
    h, w = input.height, input.width
    first = True
    sizes = []
    for stage in spec.stages:
        for block in stage:
            if isinstance(block, ConvBlock):
                f = block.filter
                if isinstance(f, SquareFilter):
                    subs = [(f.size, f.size)]
                else:
                    subs = [(f.first_h, f.first_w), (f.second_h, f.second_w)]
                for _ in range(block.repeat):
                    for j, (kh, kw) in enumerate(subs):
                        stride = block.stride if j == 0 else 1
                        padding = "valid" if first else "same"
                        first = False
                        h = _conv_out(h, kh, stride, padding)
                        w = _conv_out(w, kw, stride, padding)
            else:
                h = (h - block.window) // block.stride + 1
                w = (w - block.window) // block.stride + 1
        sizes.append(h)
    return sizes
