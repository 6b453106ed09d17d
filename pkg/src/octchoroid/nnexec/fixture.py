"""The shipped reference small-UNet (MobileNetV3-style blocks, random weights).

This is a structural fixture for exercising the executor and timing the
pipeline.  Its weights are seeded random numbers, not a trained choroid
model, so its probability maps carry no anatomical meaning.

Regenerate the packaged files with ``python -m octchoroid.nnexec.fixture``.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .network import _weight_shapes, build_network, load_network, parse_spec, write_weights

FIXTURE_SEED = 20230714
SPEC_NAME = "small_unet.json"
WEIGHTS_NAME = "small_unet.bin"


def _conv(lid, src, cin, cout, k=3, s=1, bias=False, groups=1):
    return {"id": lid, "kind": "conv", "inputs": [src], "in_ch": cin, "out_ch": cout,
            "k": k, "s": s, "p": k // 2, "groups": groups, "bias": bias}


def _dw(lid, src, ch, k=3, s=1):
    return {"id": lid, "kind": "dwconv", "inputs": [src], "channels": ch, "k": k, "s": s,
            "p": k // 2, "bias": False}


def _bn(lid, src, ch):
    return {"id": lid, "kind": "bn", "inputs": [src], "channels": ch}


def _act(lid, src, fn):
    return {"id": lid, "kind": "act", "inputs": [src], "fn": fn}


def small_unet_spec(height=544, width=768):
    layers = [
        _conv("stem", "input", 1, 8, k=3, s=2), _bn("stem_bn", "stem", 8),
        _act("stem_act", "stem_bn", "hswish"),
        # bneck 1: depthwise separable with residual
        _dw("b1_dw", "stem_act", 8), _bn("b1_dw_bn", "b1_dw", 8), _act("b1_dw_act", "b1_dw_bn", "relu"),
        _conv("b1_pw", "b1_dw_act", 8, 8, k=1), _bn("b1_pw_bn", "b1_pw", 8),
        {"id": "b1", "kind": "add", "inputs": ["stem_act", "b1_pw_bn"]},
        # bneck 2: expand, strided depthwise, squeeze-excite, project
        _conv("b2_exp", "b1", 8, 16, k=1), _bn("b2_exp_bn", "b2_exp", 16),
        _act("b2_exp_act", "b2_exp_bn", "hswish"),
        _dw("b2_dw", "b2_exp_act", 16, k=3, s=2), _bn("b2_dw_bn", "b2_dw", 16),
        _act("b2_dw_act", "b2_dw_bn", "hswish"),
        {"id": "b2_se", "kind": "se", "inputs": ["b2_dw_act"], "channels": 16, "r": 4},
        _conv("b2_pw", "b2_se", 16, 16, k=1), _bn("b2", "b2_pw", 16),
        # bneck 3
        _conv("b3_exp", "b2", 16, 32, k=1), _bn("b3_exp_bn", "b3_exp", 32),
        _act("b3_exp_act", "b3_exp_bn", "hswish"),
        _dw("b3_dw", "b3_exp_act", 32, k=5, s=2), _bn("b3_dw_bn", "b3_dw", 32),
        _act("b3_dw_act", "b3_dw_bn", "hswish"),
        {"id": "b3_se", "kind": "se", "inputs": ["b3_dw_act"], "channels": 32, "r": 4},
        _conv("b3_pw", "b3_se", 32, 24, k=1), _bn("b3", "b3_pw", 24),
        # decoder
        {"id": "up2", "kind": "upsample2x_bilinear", "inputs": ["b3"]},
        {"id": "cat2", "kind": "concat", "inputs": ["up2", "b2"]},
        _conv("d2", "cat2", 40, 16, k=3), _bn("d2_bn", "d2", 16), _act("d2_act", "d2_bn", "relu"),
        {"id": "up1", "kind": "upsample2x_bilinear", "inputs": ["d2_act"]},
        {"id": "cat1", "kind": "concat", "inputs": ["up1", "b1"]},
        _conv("d1", "cat1", 24, 8, k=3), _bn("d1_bn", "d1", 8), _act("d1_act", "d1_bn", "relu"),
        _conv("logits", "d1_act", 8, 1, k=1, bias=True),
        {"id": "up0", "kind": "upsample2x_bilinear", "inputs": ["logits"]},
        {"id": "prob", "kind": "sigmoid_head", "inputs": ["up0"]},
    ]
    return {
        "format": "nnx-spec/1",
        "name": "small-unet-mbv3-fixture",
        "note": "structural fixture with seeded random weights; not a trained choroid model",
        "input": {"channels": 1, "height": height, "width": width},
        "layers": layers,
    }


def random_weights(doc, seed=FIXTURE_SEED):
    """He-scaled conv kernels, near-identity batch-norm statistics."""
    _, layers = parse_spec(doc)
    rng = np.random.default_rng(seed)
    chunks = []
    for layer in layers:
        shapes = _weight_shapes(layer)
        if layer.kind == "bn":
            ch = shapes[0][0]
            chunks += [rng.uniform(0.8, 1.2, ch), rng.normal(0, 0.1, ch),
                       rng.normal(0, 0.1, ch), rng.uniform(0.5, 1.5, ch)]
            continue
        for shape in shapes:
            if len(shape) == 4:
                fan_in = shape[1] * shape[2] * shape[3]
                chunks.append(rng.normal(0, np.sqrt(2.0 / fan_in), shape).ravel())
            else:
                chunks.append(rng.normal(0, 0.05, shape))
    return np.concatenate(chunks).astype(np.float32)


def fixture_paths():
    base = resources.files("octchoroid") / "data"
    return Path(str(base / SPEC_NAME)), Path(str(base / WEIGHTS_NAME))


def load_fixture(fold_bn=True):
    spec, weights = fixture_paths()
    return load_network(spec, weights, fold_bn=fold_bn)


def write_fixture(directory):
    directory = Path(directory)
    doc = small_unet_spec()
    weights = random_weights(doc)
    build_network(doc, weights)  # validates
    (directory / SPEC_NAME).write_text(json.dumps(doc, indent=1) + "\n")
    write_weights(directory / WEIGHTS_NAME, weights)


if __name__ == "__main__":
    write_fixture(Path(__file__).resolve().parent.parent / "data")
