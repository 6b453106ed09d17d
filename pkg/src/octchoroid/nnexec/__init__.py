from .kernels import (ShapeError, activation, conv2d, global_avg_pool, hsigmoid, hswish, relu,
                      relu6, se_block, sigmoid, upsample2x_bilinear)
from .network import (LayerSpec, Network, NetworkSpecError, WeightCountError, build_network,
                      forward, load_network, read_weights, write_weights)

__all__ = [
    "LayerSpec", "Network", "NetworkSpecError", "ShapeError", "WeightCountError", "activation",
    "build_network", "conv2d", "forward", "global_avg_pool", "hsigmoid", "hswish",
    "load_network", "read_weights", "relu", "relu6", "se_block", "sigmoid",
    "upsample2x_bilinear", "write_weights",
]
