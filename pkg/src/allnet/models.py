"""Backbone fragments and the full hybrid fusion classifier.

Three mini-backbones (VGG-, ResNet-, Inception-style) run in parallel on the
same input. Two tap activations from each backbone feed one fusion stage
("concatenate1"), the three backbone outputs feed another ("concatenate2"),
and the merged features ("concatenate3") drive a small dense head ending in a
single sigmoid neuron.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .graph import Graph, GraphBuilder, GraphError


@dataclass(frozen=True)
class BackboneHooks:
    """Node ids a backbone fragment exposes to the fusion head."""

    final: int
    taps: tuple[int, int]


def add_mini_vgg(b: GraphBuilder, src: int, widths=(16, 32, 64), scope: str = "vgg") -> BackboneHooks:
    """Stages of two 3x3 convs + relu followed by a 2x2/2 max pool.

    Taps are the ends of the last two stages, so at least two stage widths are
    required.
    """
    widths = tuple(widths)
    if len(widths) < 2:
        raise GraphError(f"mini-vgg needs at least 2 stage widths (taps undefined), got {widths}")
    stage_ends = []
    h = src
    for w in widths:
        h = b.relu(b.conv(h, w, 3, 1, 1, scope=scope))
        h = b.relu(b.conv(h, w, 3, 1, 1, scope=scope))
        h = b.maxpool(h, 2, 2)
        stage_ends.append(h)
    return BackboneHooks(final=h, taps=(stage_ends[-2], stage_ends[-1]))


def add_mini_resnet(b: GraphBuilder, src: int, width: int = 32, blocks: int = 3,
                    scope: str = "resnet") -> BackboneHooks:
    """Stem conv then identity-skip residual blocks (conv-relu-conv + add, relu).

    Taps are the outputs of block 2 and the final block.
    """
    if blocks < 2:
        raise GraphError(f"mini-resnet needs blocks >= 2, got {blocks}")
    h = b.relu(b.conv(src, width, 3, 1, 1, scope=scope))
    block_outs = []
    for _ in range(blocks):
        r = b.relu(b.conv(h, width, 3, 1, 1, scope=scope))
        r = b.conv(r, width, 3, 1, 1, scope=scope)
        h = b.relu(b.add(h, r))
        block_outs.append(h)
    return BackboneHooks(final=h, taps=(block_outs[1], block_outs[-1]))


def add_mini_inception(b: GraphBuilder, src: int, branch_widths=(8, 16, 8, 8),
                       reduce_c: int = 8, blocks: int = 2, stem_width: int = 16,
                       scope: str = "incep") -> BackboneHooks:
    """Strided stem conv then blocks of four parallel branches, concatenated.

    Branches per block: 1x1 conv; 1x1 -> 3x3 conv; 1x1 -> 5x5 conv (pad 2);
    3x3/1 max pool (pad 1) -> 1x1 conv. All branches preserve spatial dims, so
    each block emits sum(branch_widths) channels at the block's input size.
    Taps are the outputs of blocks 1 and 2.
    """
    if blocks < 2:
        raise GraphError(f"mini-inception needs blocks >= 2, got {blocks}")
    w1, w2, w3, w4 = branch_widths
    h = b.relu(b.conv(src, stem_width, 3, 2, 1, scope=scope))
    outs = []
    for _ in range(blocks):
        b1 = b.relu(b.conv(h, w1, 1, scope=scope))
        b2 = b.relu(b.conv(h, reduce_c, 1, scope=scope))
        b2 = b.relu(b.conv(b2, w2, 3, 1, 1, scope=scope))
        b3 = b.relu(b.conv(h, reduce_c, 1, scope=scope))
        b3 = b.relu(b.conv(b3, w3, 5, 1, 2, scope=scope))
        b4 = b.maxpool(h, 3, 1, 1)
        b4 = b.relu(b.conv(b4, w4, 1, scope=scope))
        h = b.concat([b1, b2, b3, b4])
        outs.append(h)
    return BackboneHooks(final=h, taps=(outs[0], outs[1]))


def _standalone(add_fn, in_c, input_hw, seed, **kwargs) -> Graph:
    b = GraphBuilder((in_c, *input_hw), seed=seed)
    hooks = add_fn(b, b.input_id, **kwargs)
    b.tap("tap1", hooks.taps[0])
    b.tap("tap2", hooks.taps[1])
    b.tap("final", hooks.final)
    return b.graph()


def build_mini_vgg(in_c: int = 3, widths=(16, 32, 64), input_hw=(64, 64), seed: int = 0) -> Graph:
    return _standalone(add_mini_vgg, in_c, input_hw, seed, widths=widths)


def build_mini_resnet(in_c: int = 3, width: int = 32, blocks: int = 3,
                      input_hw=(64, 64), seed: int = 0) -> Graph:
    return _standalone(add_mini_resnet, in_c, input_hw, seed, width=width, blocks=blocks)


def build_mini_inception(in_c: int = 3, branch_widths=(8, 16, 8, 8), reduce_c: int = 8,
                         blocks: int = 2, stem_width: int = 16,
                         input_hw=(64, 64), seed: int = 0) -> Graph:
    return _standalone(add_mini_inception, in_c, input_hw, seed, branch_widths=branch_widths,
                       reduce_c=reduce_c, blocks=blocks, stem_width=stem_width)


@dataclass(frozen=True)
class AllNetConfig:
    """Width and topology knobs for the full fusion classifier."""

    in_channels: int = 3
    input_hw: tuple[int, int] = (64, 64)
    vgg_widths: tuple[int, ...] = (16, 32, 64)
    resnet_width: int = 32
    resnet_blocks: int = 3
    incep_stem_width: int = 16
    incep_branch_widths: tuple[int, int, int, int] = (8, 16, 8, 8)
    incep_reduce: int = 8
    incep_blocks: int = 2
    tap_conv_width: int = 16
    bridge_widths: tuple[int, int] = (64, 32)
    head_conv_width: int = 64
    dense_width: int = 64
    fusion_grid: int = 4
    seed: int = 0

    def concat2_channels(self) -> int:
        return self.vgg_widths[-1] + self.resnet_width + sum(self.incep_branch_widths)

    def concat1_channels(self) -> int:
        return 6 * self.tap_conv_width

    def concat3_channels(self) -> int:
        return self.concat2_channels() + self.bridge_widths[1]


def toy_config(input_hw=(32, 32), seed: int = 0) -> AllNetConfig:
    """Halved-width configuration for fast desk-scale runs."""
    return AllNetConfig(
        input_hw=tuple(input_hw),
        vgg_widths=(8, 16, 32),
        resnet_width=16,
        incep_stem_width=8,
        incep_branch_widths=(4, 8, 4, 4),
        incep_reduce=4,
        tap_conv_width=8,
        bridge_widths=(32, 16),
        head_conv_width=32,
        dense_width=32,
        seed=seed,
    )


def with_input(cfg: AllNetConfig, input_hw) -> AllNetConfig:
    return replace(cfg, input_hw=tuple(input_hw))


def build_allnet(cfg: AllNetConfig = AllNetConfig()) -> Graph:
    """Assemble the full classifier graph with its four named fusion taps.

    Topology: the two taps of each backbone pass through a 2x2/2 max pool, two
    3x3 convs with relu, and an adaptive pool to the fusion grid; the six
    results merge into "concatenate1". The three backbone outputs, adaptively
    pooled to the same grid, merge into "concatenate2". concatenate1 runs
    through two 1x1 convs and joins concatenate2 as "concatenate3", which
    feeds max-pool(3, stride 2) -> 1x1 conv -> dense -> dense(1) -> sigmoid,
    tagged "output".
    """
    if cfg.fusion_grid < 3:
        raise GraphError(f"fusion grid must be >= 3 for the 3x3/2 head pool, got {cfg.fusion_grid}")
    b = GraphBuilder((cfg.in_channels, *cfg.input_hw), seed=cfg.seed)
    src = b.input_id
    vgg = add_mini_vgg(b, src, cfg.vgg_widths)
    res = add_mini_resnet(b, src, cfg.resnet_width, cfg.resnet_blocks)
    inc = add_mini_inception(b, src, cfg.incep_branch_widths, cfg.incep_reduce,
                             cfg.incep_blocks, cfg.incep_stem_width)
    grid = cfg.fusion_grid

    tap_feats = []
    for t in (*vgg.taps, *res.taps, *inc.taps):
        h = b.maxpool(t, 2, 2)
        h = b.relu(b.conv(h, cfg.tap_conv_width, 3, 1, 1, scope="head"))
        h = b.relu(b.conv(h, cfg.tap_conv_width, 3, 1, 1, scope="head"))
        tap_feats.append(b.adaptive_maxpool(h, grid))
    c1 = b.concat(tap_feats)
    b.tap("concatenate1", c1)

    c2 = b.concat([b.adaptive_maxpool(f, grid) for f in (vgg.final, res.final, inc.final)])
    b.tap("concatenate2", c2)

    h = b.relu(b.conv(c1, cfg.bridge_widths[0], 1, scope="head"))
    h = b.relu(b.conv(h, cfg.bridge_widths[1], 1, scope="head"))
    c3 = b.concat([h, c2])
    b.tap("concatenate3", c3)

    h = b.maxpool(c3, 3, 2)
    h = b.conv(h, cfg.head_conv_width, 1, scope="head")
    h = b.dense(h, cfg.dense_width, scope="head")
    h = b.dense(h, 1, scope="head")
    out = b.sigmoid(h)
    b.tap("output", out)

    graph = b.graph()
    if graph.node(out).out_shape != (1, 1, 1):
        raise GraphError(
            f"classifier output must be a single 1x1 neuron, got {graph.node(out).out_shape}"
        )
    return graph
