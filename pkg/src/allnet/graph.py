"""Computation graphs: node DAG, forward execution, reverse-mode gradients.

A Graph is an ordered list of nodes in topological insertion order; each node
names its input node ids, so execution is a single sweep and backpropagation
a single reverse sweep. Parameters live on their conv/dense nodes. Named taps
expose activations of interest (the fusion points of the classifier).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import ConvParams, DenseParams, ShapeError, check_tensor

PARAM_KINDS = ("conv", "dense")


class GraphError(ValueError):
    """Graph construction violated a structural contract."""


@dataclass
class Node:
    nid: int
    kind: str
    inputs: tuple[int, ...]
    out_shape: tuple[int, int, int]
    params: ConvParams | DenseParams | None = None
    attrs: dict = field(default_factory=dict)
    scope: str = ""
    trainable: bool = True

    def param_count(self) -> int:
        if isinstance(self.params, ConvParams):
            return self.params.kernel.size + self.params.bias.size
        if isinstance(self.params, DenseParams):
            return self.params.weights.size + self.params.bias.size
        return 0


class Graph:
    """Immutable-by-convention DAG plus named taps and the expected input shape."""

    def __init__(self, nodes: list[Node], named_taps: dict[str, int], in_shape: tuple[int, int, int]):
        self.nodes = nodes
        self.named_taps = dict(named_taps)
        self.in_shape = tuple(in_shape)

    def node(self, nid: int) -> Node:
        return self.nodes[nid]

    @property
    def output_id(self) -> int:
        return self.nodes[-1].nid

    def param_items(self):
        """Yield (node_id, param_name, array) in node-id order, weights before bias."""
        for node in self.nodes:
            if isinstance(node.params, ConvParams):
                yield node.nid, "kernel", node.params.kernel
                yield node.nid, "bias", node.params.bias
            elif isinstance(node.params, DenseParams):
                yield node.nid, "weights", node.params.weights
                yield node.nid, "bias", node.params.bias

    def param_count(self) -> int:
        return sum(node.param_count() for node in self.nodes)

    def copy(self, dtype=None) -> "Graph":
        """Deep-copy parameters (optionally cast); structure is shared-safe."""
        nodes = []
        for n in self.nodes:
            params = n.params
            if params is not None:
                params = params.astype(dtype) if dtype is not None else params.astype(
                    params.kernel.dtype if isinstance(params, ConvParams) else params.weights.dtype
                )
            nodes.append(
                Node(n.nid, n.kind, n.inputs, n.out_shape, params, dict(n.attrs), n.scope, n.trainable)
            )
        return Graph(nodes, self.named_taps, self.in_shape)

    def summary(self) -> str:
        """Line-oriented architecture description (no parameter values)."""
        lines = [f"graph input={_fmt_shape(self.in_shape)}"]
        for n in self.nodes:
            parts = [f"node id={n.nid} kind={n.kind}"]
            if n.inputs:
                parts.append("in=" + ",".join(str(i) for i in n.inputs))
            if n.kind == "conv":
                k = n.params.kernel.shape
                parts.append(f"k={k[0]}x{k[1]}x{k[2]}x{k[3]}")
                parts.append(f"stride={n.params.stride} pad={n.params.padding}")
            elif n.kind == "dense":
                parts.append(f"units={n.params.out_units}")
            elif n.kind == "maxpool":
                parts.append(
                    f"window={n.attrs['window']} stride={n.attrs['stride']} pad={n.attrs['padding']}"
                )
            elif n.kind == "adaptivepool":
                parts.append(f"grid={n.attrs['grid']}")
            if n.kind in PARAM_KINDS:
                parts.append(f"scope={n.scope or '-'} params={n.param_count()}")
            parts.append(f"out={_fmt_shape(n.out_shape)}")
            lines.append(" ".join(parts))
        for name in sorted(self.named_taps):
            lines.append(f"tap {name}={self.named_taps[name]}")
        lines.append(f"total_params={self.param_count()}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> int:
        """64-bit architecture fingerprint (parameter values excluded)."""
        digest = hashlib.sha256(self.summary().encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")

    def param_digest(self) -> str:
        """Hash of all parameter bytes; changes iff any parameter value changes."""
        h = hashlib.sha256()
        for _, _, arr in self.param_items():
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _fmt_shape(shape) -> str:
    return "x".join(str(d) for d in shape)


class GraphBuilder:
    """Incrementally builds a Graph; every add_* validates shapes immediately.

    Weights are initialized uniform in +-sqrt(6/(fan_in+fan_out)) from the
    builder's seeded generator; biases start at zero.
    """

    def __init__(self, in_shape: tuple[int, int, int], seed: int = 0):
        if len(in_shape) != 3 or min(in_shape) < 1:
            raise GraphError(f"input shape must be (C, H, W) positive, got {in_shape}")
        self.in_shape = tuple(int(d) for d in in_shape)
        self._rng = np.random.default_rng(seed)
        self._nodes: list[Node] = [Node(0, "input", (), self.in_shape)]
        self._taps: dict[str, int] = {}
        self.input_id = 0

    def _shape(self, nid: int) -> tuple[int, int, int]:
        return self._nodes[nid].out_shape

    def _push(self, node: Node) -> int:
        for src in node.inputs:
            if not 0 <= src < len(self._nodes):
                raise GraphError(f"node {node.nid} references undeclared input {src}")
        self._nodes.append(node)
        return node.nid

    def _uniform(self, shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self._rng.uniform(-bound, bound, size=shape).astype(np.float32)

    def conv(self, src: int, out_c: int, ksize: int, stride: int = 1, padding: int = 0,
             scope: str = "", trainable: bool = True) -> int:
        in_c, h, w = self._shape(src)
        kernel = self._uniform((out_c, in_c, ksize, ksize), in_c * ksize * ksize, out_c * ksize * ksize)
        params = ConvParams(kernel, np.zeros(out_c, np.float32), stride, padding)
        out_h, out_w = params.out_hw(h, w)
        nid = len(self._nodes)
        return self._push(Node(nid, "conv", (src,), (out_c, out_h, out_w), params,
                               scope=scope, trainable=trainable))

    def dense(self, src: int, units: int, scope: str = "", trainable: bool = True) -> int:
        c, h, w = self._shape(src)
        in_units = c * h * w
        params = DenseParams(self._uniform((units, in_units), in_units, units),
                             np.zeros(units, np.float32))
        nid = len(self._nodes)
        return self._push(Node(nid, "dense", (src,), (units, 1, 1), params,
                               scope=scope, trainable=trainable))

    def relu(self, src: int) -> int:
        nid = len(self._nodes)
        return self._push(Node(nid, "relu", (src,), self._shape(src)))

    def sigmoid(self, src: int) -> int:
        nid = len(self._nodes)
        return self._push(Node(nid, "sigmoid", (src,), self._shape(src)))

    def maxpool(self, src: int, window: int, stride: int, padding: int = 0) -> int:
        c, h, w = self._shape(src)
        out_h = (h + 2 * padding - window) // stride + 1
        out_w = (w + 2 * padding - window) // stride + 1
        if out_h < 1 or out_w < 1:
            raise GraphError(
                f"maxpool window {window} exceeds padded {h}x{w} input of node {src}"
            )
        nid = len(self._nodes)
        return self._push(Node(nid, "maxpool", (src,), (c, out_h, out_w),
                               attrs={"window": window, "stride": stride, "padding": padding}))

    def adaptive_maxpool(self, src: int, grid: int) -> int:
        c, _, _ = self._shape(src)
        if grid < 1:
            raise GraphError(f"adaptive pool grid must be >= 1, got {grid}")
        nid = len(self._nodes)
        return self._push(Node(nid, "adaptivepool", (src,), (c, grid, grid),
                               attrs={"grid": grid}))

    def concat(self, srcs) -> int:
        srcs = tuple(srcs)
        if not srcs:
            raise GraphError("concat needs at least one input")
        _, h0, w0 = self._shape(srcs[0])
        channels = 0
        for i, s in enumerate(srcs):
            c, h, w = self._shape(s)
            if (h, w) != (h0, w0):
                raise GraphError(
                    f"concat input {i} (node {s}) has spatial dims {h}x{w}, "
                    f"incompatible with input 0 ({h0}x{w0})"
                )
            channels += c
        nid = len(self._nodes)
        return self._push(Node(nid, "concat", srcs, (channels, h0, w0)))

    def add(self, a: int, b: int) -> int:
        if self._shape(a) != self._shape(b):
            raise GraphError(
                f"add operands differ: node {a} {self._shape(a)} vs node {b} {self._shape(b)}"
            )
        nid = len(self._nodes)
        return self._push(Node(nid, "add", (a, b), self._shape(a)))

    def tap(self, label: str, nid: int) -> None:
        if not 0 <= nid < len(self._nodes):
            raise GraphError(f"tap {label!r} references undeclared node {nid}")
        self._taps[label] = nid

    def graph(self) -> Graph:
        return Graph(list(self._nodes), dict(self._taps), self.in_shape)


@dataclass
class ForwardTape:
    """Per-node activations plus pooling argmax maps from one forward pass."""

    activations: dict[int, np.ndarray]
    aux: dict[int, np.ndarray]

    def output(self, graph: Graph) -> np.ndarray:
        return self.activations[graph.output_id]


def forward(graph: Graph, x: np.ndarray) -> ForwardTape:
    """Run the graph on a batch; visits every node exactly once, in order."""
    check_tensor(x)
    if tuple(x.shape[1:]) != graph.in_shape:
        raise ShapeError(
            f"node 0: input shape {x.shape[1:]} does not match graph input {graph.in_shape}"
        )
    acts: dict[int, np.ndarray] = {0: x}
    aux: dict[int, np.ndarray] = {}
    for node in graph.nodes[1:]:
        src = node.inputs[0] if node.inputs else None
        try:
            if node.kind == "conv":
                acts[node.nid] = ops.conv2d(acts[src], node.params)
            elif node.kind == "dense":
                acts[node.nid] = ops.dense(acts[src], node.params)
            elif node.kind == "relu":
                acts[node.nid] = ops.relu(acts[src])
            elif node.kind == "sigmoid":
                acts[node.nid] = ops.sigmoid(acts[src])
            elif node.kind == "maxpool":
                a = node.attrs
                acts[node.nid], aux[node.nid] = ops.maxpool2d(
                    acts[src], a["window"], a["stride"], a["padding"]
                )
            elif node.kind == "adaptivepool":
                g = node.attrs["grid"]
                acts[node.nid], aux[node.nid] = ops.adaptive_maxpool2d(acts[src], g, g)
            elif node.kind == "concat":
                acts[node.nid] = ops.concat_channels([acts[s] for s in node.inputs])
            elif node.kind == "add":
                acts[node.nid] = ops.elementwise_add(acts[node.inputs[0]], acts[node.inputs[1]])
            else:
                raise GraphError(f"node {node.nid}: unknown kind {node.kind!r}")
        except ShapeError as err:
            raise ShapeError(f"node {node.nid} ({node.kind}): {err}") from err
    return ForwardTape(acts, aux)


def _accumulate(grads: dict, nid: int, g: np.ndarray) -> None:
    if nid in grads:
        grads[nid] = grads[nid] + g
    else:
        grads[nid] = g.copy()


def backward(graph: Graph, tape: ForwardTape, grad_out: np.ndarray,
             frozen: frozenset | set = frozenset()) -> dict[int, dict[str, np.ndarray]]:
    """Reverse sweep; returns {node_id: {param_name: grad}} for trainable,
    unfrozen parameters. Frozen nodes still pass gradients downstream."""
    acts = tape.activations
    out_id = graph.output_id
    if grad_out.shape != acts[out_id].shape:
        raise ShapeError(
            f"node {out_id}: loss gradient shape {grad_out.shape} does not match "
            f"output {acts[out_id].shape}"
        )
    grads: dict[int, np.ndarray] = {out_id: grad_out}
    param_grads: dict[int, dict[str, np.ndarray]] = {}
    for node in reversed(graph.nodes):
        if node.nid not in grads or node.kind == "input":
            continue
        g = grads.pop(node.nid)
        src = node.inputs[0]
        if node.kind == "conv":
            gx, gk, gb = ops.conv2d_backward(acts[src], node.params, g)
            _accumulate(grads, src, gx)
            if node.trainable and node.nid not in frozen:
                param_grads[node.nid] = {"kernel": gk, "bias": gb}
        elif node.kind == "dense":
            gx, gw, gb = ops.dense_backward(acts[src], node.params, g)
            _accumulate(grads, src, gx)
            if node.trainable and node.nid not in frozen:
                param_grads[node.nid] = {"weights": gw, "bias": gb}
        elif node.kind == "relu":
            _accumulate(grads, src, ops.relu_backward(acts[src], g))
        elif node.kind == "sigmoid":
            _accumulate(grads, src, ops.sigmoid_backward(acts[node.nid], g))
        elif node.kind in ("maxpool", "adaptivepool"):
            _accumulate(grads, src, ops.maxpool2d_backward(tape.aux[node.nid], g, acts[src].shape))
        elif node.kind == "concat":
            sizes = [graph.node(s).out_shape[0] for s in node.inputs]
            for s, piece in zip(node.inputs, ops.concat_channels_backward(g, sizes)):
                _accumulate(grads, s, piece)
        elif node.kind == "add":
            _accumulate(grads, node.inputs[0], g)
            _accumulate(grads, node.inputs[1], g)
    return param_grads


def resolve_freeze(graph: Graph, spec) -> set[int]:
    """Expand freeze tokens (scope names, node ids, 'a-b' ranges) to node ids."""
    frozen: set[int] = set()
    scopes = {n.scope for n in graph.nodes if n.kind in PARAM_KINDS and n.scope}
    for token in spec:
        token = str(token).strip()
        if not token:
            continue
        if token in scopes:
            frozen.update(
                n.nid for n in graph.nodes if n.kind in PARAM_KINDS and n.scope == token
            )
        elif "-" in token and not token.startswith("-"):
            lo, hi = token.split("-", 1)
            frozen.update(
                n.nid for n in graph.nodes
                if n.kind in PARAM_KINDS and int(lo) <= n.nid <= int(hi)
            )
        elif token.isdigit():
            frozen.add(int(token))
        else:
            raise ValueError(
                f"unknown freeze token {token!r}; expected a scope in {sorted(scopes)}, "
                "a node id, or an id range 'a-b'"
            )
    return frozen


@dataclass
class GradCheckSample:
    node_id: int
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    n_checked: int
    tolerance: float
    max_rel_error: float
    passed: bool
    samples: list[GradCheckSample]

    def worst(self) -> GradCheckSample | None:
        return max(self.samples, key=lambda s: s.rel_error) if self.samples else None


def grad_check(graph: Graph, x: np.ndarray, n_samples: int = 20, tolerance: float = 1e-3,
               step: float = 1e-5, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Runs on a float64 copy of the graph so the comparison sits above storage
    rounding; parameters are sampled uniformly at random (seeded) across all
    trainable tensors. A non-finite gradient on either side is a failure.

    The default step is small because max pooling and relu are only piecewise
    smooth: a large step makes the central difference straddle an argmax
    switch somewhere in a deep graph. float64 keeps roundoff well below any
    useful tolerance at 1e-5.
    """
    g64 = graph.copy(np.float64)
    x64 = x.astype(np.float64)
    tape = forward(g64, x64)
    out = tape.output(g64)
    analytic = backward(g64, tape, np.ones_like(out))

    entries = [
        (nid, name, arr)
        for nid, name, arr in g64.param_items()
        if g64.node(nid).trainable
    ]
    sizes = np.array([arr.size for _, _, arr in entries], dtype=np.int64)
    total = int(sizes.sum())
    if total == 0:
        raise GraphError("graph has no trainable parameters to check")
    rng = np.random.default_rng(seed)
    n = min(max(1, n_samples), total)
    picks = rng.choice(total, size=n, replace=False)
    bounds = np.cumsum(sizes)

    def loss() -> float:
        return float(forward(g64, x64).output(g64).sum())

    samples = []
    for pick in np.sort(picks):
        e = int(np.searchsorted(bounds, pick, side="right"))
        offset = int(pick - (bounds[e - 1] if e > 0 else 0))
        nid, name, arr = entries[e]
        flat = arr.reshape(-1)
        orig = flat[offset]
        flat[offset] = orig + step
        up = loss()
        flat[offset] = orig - step
        down = loss()
        flat[offset] = orig
        numeric = (up - down) / (2.0 * step)
        a = float(analytic[nid][name].reshape(-1)[offset])
        if not (np.isfinite(a) and np.isfinite(numeric)):
            rel = np.inf
        else:
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        samples.append(GradCheckSample(nid, name, offset, a, float(numeric), float(rel)))

    max_rel = max(s.rel_error for s in samples)
    return GradCheckReport(len(samples), tolerance, max_rel, bool(max_rel <= tolerance), samples)
