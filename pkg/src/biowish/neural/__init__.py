from .layers import (BatchNorm, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU,
                     ShapeError)
from .losses import contrastive, cross_entropy
from .network import WISHNET_T, WISHNET_TF, Network, build_network, softmax
from .optim import SGDM
from .train import PairSampler, TrainConfig, train_classifier, train_siamese

__all__ = [
    "BatchNorm", "Conv2D", "Dense", "Dropout", "Flatten", "Layer", "MaxPool2D", "ReLU",
    "ShapeError", "contrastive", "cross_entropy", "WISHNET_T", "WISHNET_TF", "Network",
    "build_network", "softmax", "SGDM", "PairSampler", "TrainConfig", "train_classifier",
    "train_siamese",
]
