"""Regenerate the small-UNet golden output used by the executor tests.

The output is computed by the naive float64 loop-nest executor with batch
norm left unfolded, on a fixed phantom resampled to 32x48:

    python3 tests/data/make_golden.py
"""

import json
from pathlib import Path

import numpy as np

from octchoroid.ingest import PreprocessConfig, preprocess
from octchoroid.nnexec import build_network, forward, read_weights
from octchoroid.nnexec.fixture import fixture_paths, small_unet_spec
from octchoroid.phantom import flat_spec, generate

HERE = Path(__file__).resolve().parent
HEIGHT, WIDTH = 32, 48


def golden_network(fold_bn):
    _, weights_path = fixture_paths()
    return build_network(small_unet_spec(HEIGHT, WIDTH), read_weights(weights_path), fold_bn)


def golden_input():
    scan, _, _ = generate(flat_spec(280.0, seed=5))
    return preprocess(scan, PreprocessConfig(HEIGHT, WIDTH)).model_input


def main():
    x = golden_input()
    y = forward(golden_network(fold_bn=False), x, reference=True)
    np.save(HERE / "golden_input.npy", x)
    np.save(HERE / "golden_output.npy", y)
    (HERE / "golden_meta.json").write_text(json.dumps(
        {"height": HEIGHT, "width": WIDTH, "executor": "naive float64, bn unfolded",
         "phantom": "flat_spec(280.0, seed=5)"}, indent=1) + "\n")


if __name__ == "__main__":
    main()
