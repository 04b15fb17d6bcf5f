"""Random layer instances for the finite-difference gradient suite."""

import numpy as np

from sparsemia.butterfly import ButterflyConv2d, ButterflyDense
from sparsemia.nn import (BasicBlock, BatchNorm2d, Conv2d, Dense, Flatten, GlobalAvgPool2d, ReLU,
                          Sequential, Sigmoid)

INSTANCES = 20
TOLERANCE = 1e-4
MAX_SKIPPED_FRACTION = 0.10


def _init(layer, rng):
    for _, m in layer.named_modules():
        m.reset_parameters(rng)
    return layer


def _bn_with_stats(rng, c):
    bn = BatchNorm2d(c)
    bn.weight.value[...] = rng.uniform(0.5, 1.5, c)
    bn.bias.value[...] = rng.normal(size=c)
    return bn


def dense(rng):
    i, o = rng.integers(1, 6, size=2)
    return _init(Dense(int(i), int(o), bias=bool(rng.integers(2))), rng), rng.normal(size=(3, i))


def conv(rng):
    k = int(rng.choice([1, 3]))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    cin, cout = rng.integers(1, 4, size=2)
    layer = _init(Conv2d(int(cin), int(cout), k, stride, padding, bias=bool(rng.integers(2))), rng)
    return layer, rng.normal(size=(2, cin, 5, 5))


def batchnorm_train(rng):
    c = int(rng.integers(1, 4))
    return _bn_with_stats(rng, c), rng.normal(size=(4, c, 3, 3))


def batchnorm_eval(rng):
    c = int(rng.integers(1, 4))
    bn = _bn_with_stats(rng, c)
    bn._buffers["running_mean"][...] = rng.normal(size=c)
    bn._buffers["running_var"][...] = rng.uniform(0.5, 2.0, c)
    bn.eval()
    return bn, rng.normal(size=(4, c, 3, 3))


def relu(rng):
    x = rng.normal(size=(3, 7))
    x[np.abs(x) < 0.01] = 0.5
    return ReLU(), x


def sigmoid(rng):
    return Sigmoid(), rng.normal(size=(3, 5)) * 3


def flatten_pool(rng):
    return Sequential(GlobalAvgPool2d(), Flatten()), rng.normal(size=(2, 3, 4, 4))


def mlp(rng):
    net = Sequential(Flatten(), Dense(12, 6), ReLU(), Dense(6, 3))
    return _init(net, rng), rng.normal(size=(3, 3, 2, 2))


def basic_block(rng):
    stride = int(rng.integers(1, 3))
    cin = 3
    cout = cin if stride == 1 and rng.integers(2) else 2 * cin
    block = _init(BasicBlock(cin, cout, stride), rng)
    for _, m in block.named_modules():
        if isinstance(m, BatchNorm2d):
            m.weight.value[...] = rng.uniform(0.5, 1.5, m.channels)
            m.bias.value[...] = rng.normal(size=m.channels) * 0.1
    return block, rng.normal(size=(3, cin, 4, 4))


def butterfly_dense(rng):
    i, o = [int(v) for v in rng.choice([4, 6, 8], size=2)]
    layer = ButterflyDense(i, o, int(rng.integers(1, 3)), bias=bool(rng.integers(2)))
    return _init(layer, rng), rng.normal(size=(3, i))


def butterfly_conv(rng):
    cin, cout = int(rng.choice([2, 4])), int(rng.choice([4, 8]))
    layer = ButterflyConv2d(cin, cout, 3, 2, stride=int(rng.integers(1, 3)), padding=1)
    return _init(layer, rng), rng.normal(size=(2, cin, 4, 4))


CASES = {
    "dense": dense,
    "conv": conv,
    "batchnorm-train": batchnorm_train,
    "batchnorm-eval": batchnorm_eval,
    "relu": relu,
    "sigmoid": sigmoid,
    "pool-flatten": flatten_pool,
    "mlp": mlp,
    "basic-block": basic_block,
    "butterfly-dense": butterfly_dense,
    "butterfly-conv": butterfly_conv,
}
