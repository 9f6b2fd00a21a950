from .autodiff import GradTape, TapeError, Var
from .nets import (
    FeedForward,
    ScaledResNet,
    ScaledTwoLayerNet,
    forward_resnet,
    forward_two_layer,
    path_norm,
)
from .optim import Optimizer, optimizer_step
from .params import ParamStore
from .summation import canonical_sum


def backward(tape, out):
    return tape.backward(out)


__all__ = [
    "FeedForward", "GradTape", "Optimizer", "ParamStore", "ScaledResNet",
    "ScaledTwoLayerNet", "TapeError", "Var", "backward", "canonical_sum",
    "forward_resnet", "forward_two_layer", "optimizer_step", "path_norm",
]
