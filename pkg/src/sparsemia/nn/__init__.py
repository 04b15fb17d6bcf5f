from .functional import softmax
from .layers import (BasicBlock, BatchNorm2d, Conv2d, Dense, Flatten, GlobalAvgPool2d, ReLU,
                     Segment, Sequential, Sigmoid)
from .losses import binary_cross_entropy, cross_entropy
from .models import Model, build_mlp, build_model, build_resnet, mini_resnet, resnet20
from .module import Module, Parameter, init_params
from .optim import SGD, Adam, lr_at_epoch
from .train import EpochRecord, TrainConfig, evaluate_accuracy, train
