"""Layer-graph networks: JSON spec + flat float32 weights, executed on CPU.

Spec format (``nnx-spec/1``)::

    {
      "format": "nnx-spec/1",
      "input": {"channels": 1, "height": 544, "width": 768},
      "layers": [
        {"id": "stem", "kind": "conv", "inputs": ["input"],
         "in_ch": 1, "out_ch": 8, "k": 3, "s": 2, "p": 1, "groups": 1, "bias": true},
        ...
        {"id": "out", "kind": "sigmoid_head", "inputs": ["logits"]}
      ]
    }

``inputs`` defaults to the previous layer (or ``"input"`` for the first).
Weights are consumed in listing order; per layer:

* conv / dwconv: kernel ``(out, in/groups, k, k)`` then bias ``(out,)`` if ``bias``
* bn: gamma, beta, running mean, running variance (each ``(channels,)``)
* se: reduce kernel ``(C_r, C, 1, 1)``, reduce bias ``(C_r,)``, expand kernel
  ``(C, C_r, 1, 1)``, expand bias ``(C,)`` with ``C_r = max(1, C // r)``

The weights file is raw little-endian float32, optionally preceded by a
16-byte header: ``b"NNX1"``, uint64 weight count, 4 reserved zero bytes.
"""

from __future__ import annotations

import graphlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels, reference

MAGIC = b"NNX1"
HEADER_SIZE = 16
KINDS = ("conv", "dwconv", "bn", "act", "se", "global_avg_pool", "upsample2x_bilinear", "add",
         "concat", "sigmoid_head")
BN_EPS = 1e-5


class NetworkSpecError(ValueError):
    pass


class WeightCountError(NetworkSpecError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    inputs: tuple
    params: dict = field(default_factory=dict, hash=False)


def _conv_params(layer):
    p = layer.params
    if layer.kind == "dwconv":
        ch = int(p["channels"])
        in_ch, out_ch, groups = ch, ch, ch
    else:
        in_ch, out_ch, groups = int(p["in_ch"]), int(p["out_ch"]), int(p.get("groups", 1))
    k = int(p["k"])
    return {
        "in_ch": in_ch, "out_ch": out_ch, "k": k, "s": int(p.get("s", 1)),
        "p": int(p.get("p", k // 2)), "groups": groups, "bias": bool(p.get("bias", True)),
    }


def _se_reduced(channels, r):
    return max(1, channels // r)


def _weight_shapes(layer):
    kind = layer.kind
    if kind in ("conv", "dwconv"):
        c = _conv_params(layer)
        shapes = [(c["out_ch"], c["in_ch"] // c["groups"], c["k"], c["k"])]
        if c["bias"]:
            shapes.append((c["out_ch"],))
        return shapes
    if kind == "bn":
        ch = int(layer.params["channels"])
        return [(ch,)] * 4
    if kind == "se":
        ch = int(layer.params["channels"])
        cr = _se_reduced(ch, int(layer.params.get("r", 4)))
        return [(cr, ch, 1, 1), (cr,), (ch, cr, 1, 1), (ch,)]
    return []


def weight_count(layers):
    return sum(int(np.prod(s)) for layer in layers for s in _weight_shapes(layer))


def parse_spec(doc):
    """Validate a spec document; returns ``(input_shape, layers)``."""
    try:
        inp = doc["input"]
        input_shape = (int(inp.get("channels", 1)), int(inp["height"]), int(inp["width"]))
        raw_layers = doc["layers"]
    except (KeyError, TypeError, AttributeError) as exc:
        raise NetworkSpecError(f"malformed spec: {exc}") from exc
    if not raw_layers:
        raise NetworkSpecError("spec has no layers")
    layers = []
    prev = "input"
    for n, raw in enumerate(raw_layers):
        raw = dict(raw)
        kind = raw.pop("kind", None)
        if kind not in KINDS:
            raise NetworkSpecError(f"layer {n}: unknown layer kind {kind!r}")
        lid = str(raw.pop("id", f"layer{n}"))
        if lid == "input":
            raise NetworkSpecError("'input' is a reserved node id")
        inputs = tuple(str(i) for i in raw.pop("inputs", [prev]))
        layers.append(LayerSpec(lid, kind, inputs, raw))
        prev = lid

    ids = [layer.id for layer in layers]
    if len(set(ids)) != len(ids):
        raise NetworkSpecError("duplicate layer ids")
    known = set(ids) | {"input"}
    graph = {}
    for layer in layers:
        for src in layer.inputs:
            if src not in known:
                raise NetworkSpecError(f"layer {layer.id!r} references unknown node {src!r}")
        graph[layer.id] = set(layer.inputs) - {"input"}
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError as exc:
        raise NetworkSpecError(f"cyclic graph: {exc.args[1]}") from None
    seen = {"input"}
    for layer in layers:
        if not set(layer.inputs) <= seen:
            raise NetworkSpecError(f"layer {layer.id!r} is not in topological order")
        seen.add(layer.id)
    return input_shape, layers


def infer_shapes(input_shape, layers):
    """Propagate (C, H, W) through the graph, checking channel bookkeeping."""
    shapes = {"input": tuple(input_shape)}
    for layer in layers:
        ins = [shapes[i] for i in layer.inputs]
        kind = layer.kind
        if kind not in ("add", "concat") and len(ins) != 1:
            raise NetworkSpecError(f"{layer.id}: {kind} takes exactly one input")
        where = f"{layer.id} ({kind})"
        if kind in ("conv", "dwconv"):
            c = _conv_params(layer)
            ch, h, w = ins[0]
            if ch != c["in_ch"]:
                raise NetworkSpecError(f"{where}: expects {c['in_ch']} channels, gets {ch}")
            if c["in_ch"] % c["groups"] or c["out_ch"] % c["groups"]:
                raise NetworkSpecError(f"{where}: groups must divide channel counts")
            ho = kernels.conv_output_size(h, c["k"], c["s"], c["p"])
            wo = kernels.conv_output_size(w, c["k"], c["s"], c["p"])
            if ho < 1 or wo < 1:
                raise NetworkSpecError(f"{where}: output would be empty")
            shapes[layer.id] = (c["out_ch"], ho, wo)
        elif kind in ("bn", "se"):
            ch = int(layer.params["channels"])
            if ins[0][0] != ch:
                raise NetworkSpecError(f"{where}: expects {ch} channels, gets {ins[0][0]}")
            shapes[layer.id] = ins[0]
        elif kind == "act":
            if layer.params.get("fn") not in kernels.ACTIVATIONS:
                raise NetworkSpecError(f"{where}: unknown activation {layer.params.get('fn')!r}")
            shapes[layer.id] = ins[0]
        elif kind == "global_avg_pool":
            shapes[layer.id] = (ins[0][0], 1, 1)
        elif kind == "upsample2x_bilinear":
            ch, h, w = ins[0]
            shapes[layer.id] = (ch, 2 * h, 2 * w)
        elif kind == "add":
            if len(ins) < 2:
                raise NetworkSpecError(f"{where}: needs at least two inputs")
            try:
                out = np.broadcast_shapes(*ins)
            except ValueError:
                raise NetworkSpecError(f"{where}: incompatible shapes {ins}") from None
            if any(s[0] != out[0] for s in ins):
                raise NetworkSpecError(f"{where}: channel mismatch {ins}")
            shapes[layer.id] = tuple(out)
        elif kind == "concat":
            if len(ins) < 2:
                raise NetworkSpecError(f"{where}: needs at least two inputs")
            if len({s[1:] for s in ins}) != 1:
                raise NetworkSpecError(f"{where}: spatial mismatch {ins}")
            shapes[layer.id] = (sum(s[0] for s in ins),) + ins[0][1:]
        elif kind == "sigmoid_head":
            shapes[layer.id] = ins[0]
    return shapes


@dataclass
class _Step:
    id: str
    kind: str
    inputs: tuple
    tensors: list
    params: dict


@dataclass
class Network:
    layers: list
    weights: np.ndarray
    input_shape: tuple
    fold_bn: bool = True
    steps: list = field(default_factory=list, repr=False)
    shapes: dict = field(default_factory=dict, repr=False)

    @property
    def output_id(self):
        return self.layers[-1].id


def _split_weights(layers, weights):
    tensors = {}
    pos = 0
    for layer in layers:
        arrs = []
        for shape in _weight_shapes(layer):
            n = int(np.prod(shape))
            arrs.append(weights[pos:pos + n].reshape(shape))
            pos += n
        tensors[layer.id] = arrs
    return tensors


def _compile(layers, tensors, fold_bn):
    consumers = {}
    for layer in layers:
        for src in layer.inputs:
            consumers.setdefault(src, []).append(layer.id)
    by_id = {layer.id: layer for layer in layers}
    steps = []
    alias = {}
    folded = set()
    for layer in layers:
        inputs = tuple(alias.get(i, i) for i in layer.inputs)
        arrs = tensors[layer.id]
        params = dict(layer.params)
        if layer.kind in ("conv", "dwconv"):
            params = _conv_params(layer)
        if (fold_bn and layer.kind == "bn" and len(inputs) == 1 and inputs[0] in by_id
                and by_id[inputs[0]].kind in ("conv", "dwconv")
                and consumers.get(inputs[0]) == [layer.id]
                and inputs[0] not in folded):
            conv_step = next(s for s in steps if s.id == inputs[0])
            gamma, beta, mean, var = (a.astype(np.float64) for a in arrs)
            eps = float(layer.params.get("eps", BN_EPS))
            scale = gamma / np.sqrt(var + eps)
            w = conv_step.tensors[0].astype(np.float64) * scale[:, None, None, None]
            b = conv_step.tensors[1].astype(np.float64) if conv_step.params["bias"] else 0.0
            conv_step.tensors = [w, (b - mean) * scale + beta]
            conv_step.params = {**conv_step.params, "bias": True}
            folded.add(inputs[0])
            alias[layer.id] = inputs[0]
            continue
        steps.append(_Step(layer.id, layer.kind, inputs, [a.astype(np.float64) for a in arrs],
                           params))
    return steps, alias


def build_network(doc, weights, fold_bn=True):
    input_shape, layers = parse_spec(doc)
    shapes = infer_shapes(input_shape, layers)
    weights = np.asarray(weights, dtype=np.float32).ravel()
    need = weight_count(layers)
    if weights.size != need:
        raise WeightCountError(f"spec demands {need} weights, blob holds {weights.size}")
    out = layers[-1]
    consumed = {src for layer in layers for src in layer.inputs}
    dangling = [layer.id for layer in layers[:-1] if layer.id not in consumed]
    if dangling:
        raise NetworkSpecError(f"graph has more than one output: {dangling + [out.id]}")
    if out.kind != "sigmoid_head":
        raise NetworkSpecError("final layer must be a sigmoid_head")
    if shapes[out.id] != (1,) + tuple(input_shape[1:]):
        raise NetworkSpecError(
            f"output shape {shapes[out.id]} does not match 1 x {input_shape[1]} x {input_shape[2]}")
    net = Network(layers, weights, input_shape, fold_bn=fold_bn, shapes=shapes)
    net.steps, _ = _compile(layers, _split_weights(layers, weights), fold_bn)
    return net


def read_weights(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] == MAGIC:
        if len(blob) < HEADER_SIZE:
            raise WeightCountError("truncated weights header")
        (count,) = struct.unpack("<Q", blob[4:12])
        body = blob[HEADER_SIZE:]
        if len(body) != 4 * count:
            raise WeightCountError(f"header declares {count} weights, file holds {len(body) // 4}")
    else:
        body = blob
    if len(body) % 4:
        raise WeightCountError("weights blob length is not a multiple of 4 bytes")
    return np.frombuffer(body, dtype="<f4").copy()


def write_weights(path, weights, header=True):
    weights = np.asarray(weights, dtype="<f4").ravel()
    with open(path, "wb") as fh:
        if header:
            fh.write(MAGIC + struct.pack("<Q", weights.size) + b"\0\0\0\0")
        fh.write(weights.tobytes())


def load_network(spec_path, weights_path, fold_bn=True):
    with open(spec_path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkSpecError(f"{spec_path}: invalid JSON ({exc})") from exc
    return build_network(doc, read_weights(weights_path), fold_bn=fold_bn)


def _run_step(step, args, dtype):
    kind = step.kind
    t = [a.astype(dtype, copy=False) for a in step.tensors]
    if kind in ("conv", "dwconv"):
        p = step.params
        return kernels.conv2d(args[0], t[0], t[1] if p["bias"] else None, p["s"], p["p"],
                              p["groups"])
    if kind == "bn":
        gamma, beta, mean, var = t
        eps = float(step.params.get("eps", BN_EPS))
        scale = gamma / np.sqrt(var + eps)
        return args[0] * scale[:, None, None] + (beta - mean * scale)[:, None, None]
    if kind == "act":
        return kernels.activation(args[0], step.params["fn"])
    if kind == "se":
        return kernels.se_block(args[0], *t)
    if kind == "global_avg_pool":
        return kernels.global_avg_pool(args[0])
    if kind == "upsample2x_bilinear":
        return kernels.upsample2x_bilinear(args[0])
    if kind == "add":
        out = args[0]
        for a in args[1:]:
            out = out + a
        return out
    if kind == "concat":
        return np.concatenate(args, axis=0)
    if kind == "sigmoid_head":
        return kernels.sigmoid(args[0])
    raise NetworkSpecError(f"unknown layer kind {kind!r}")


def _run_step_reference(step, args):
    kind = step.kind
    t = step.tensors
    if kind in ("conv", "dwconv"):
        p = step.params
        return reference.conv2d_naive(args[0], t[0], t[1] if p["bias"] else None, p["s"],
                                      p["p"], p["groups"])
    if kind == "bn":
        return reference.batchnorm_naive(args[0], *t, float(step.params.get("eps", BN_EPS)))
    if kind == "act":
        return reference.activation_naive(args[0], step.params["fn"])
    if kind == "se":
        return reference.se_block_naive(args[0], *t)
    if kind == "global_avg_pool":
        return reference.global_avg_pool_naive(args[0])
    if kind == "upsample2x_bilinear":
        return reference.upsample2x_naive(args[0])
    if kind == "sigmoid_head":
        return reference.sigmoid_naive(args[0])
    return _run_step(step, args, np.float64)


def forward(net, grid, reference=False, dtype=np.float32):
    """Run the network on a standardized ``(H, W)`` grid; returns probabilities ``(H, W)``.

    ``reference=True`` executes every layer with the naive loop-nest kernels
    in float64 (slow; for verification on small inputs).
    """
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise kernels.ShapeError(f"expected a 2-D grid, got shape {grid.shape}")
    if net.input_shape[0] != 1:
        raise kernels.ShapeError("network must take a single input channel")
    steps = net.steps
    last_use = {}
    for n, step in enumerate(steps):
        for src in step.inputs:
            last_use[src] = n
    work_dtype = np.float64 if reference else dtype
    values = {"input": grid[None].astype(work_dtype)}
    for n, step in enumerate(steps):
        args = [values[i] for i in step.inputs]
        if reference:
            values[step.id] = _run_step_reference(step, args)
        else:
            values[step.id] = _run_step(step, args, work_dtype)
        for src in step.inputs:
            if last_use[src] == n:
                values.pop(src, None)
    out = values[steps[-1].id]
    if out.shape != (1,) + grid.shape:
        raise kernels.ShapeError(f"network produced {out.shape} for input {grid.shape}")
    return np.asarray(out[0], dtype=np.float64)
