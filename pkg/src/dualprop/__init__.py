"""Dual propagation with asymmetric nudging: inference, learning and analysis tools."""

from .analysis import grad_angle, lipschitz_estimate
from .data import Dataset, load_mnist_idx, synth_blobs
from .inference import DyadicState, NudgeConfig, Schedule, run_inference
from .learning import Adam, SGDMomentum, backprop_oracle, train, weight_gradient
from .losses import CrossEntropy, LeastSquares, make_loss
from .model import Activation, LayerSpec, NetworkParams, forward, init_weights, mlp_specs

__version__ = "0.1.0"

__all__ = [
    "Activation", "Adam", "CrossEntropy", "Dataset", "DyadicState", "LayerSpec", "LeastSquares",
    "NetworkParams", "NudgeConfig", "SGDMomentum", "Schedule", "backprop_oracle", "forward",
    "grad_angle", "init_weights", "lipschitz_estimate", "load_mnist_idx", "make_loss", "mlp_specs",
    "run_inference", "synth_blobs", "train", "weight_gradient",
]
