"""Encode small ReLU networks as mixed-integer programs and solve them."""

__version__ = "0.1.0"

from .milp import MilpModel, ModelError
from .network import NetworkError, NetworkSpec, classify, forward, load_network, read_network, write_network
from .bnb import BnbConfig, branch_and_bound
from .bounds import BoundSet, interval_propagate, lp_tighten
from .encode_common import InputMode, VarMap
from .encode_dnn import DnnEncodeConfig, encode_dnn
from .encode_cnn import CnnEncodeConfig, encode_cnn
from .adversarial import AdversarialConfig, generate_adversarial, verify_adversarial
from .train import TrainConfig, Dataset, train

__all__ = [
    "MilpModel", "ModelError", "NetworkError", "NetworkSpec", "classify", "forward", "load_network",
    "read_network", "write_network", "BnbConfig", "branch_and_bound", "BoundSet", "interval_propagate",
    "lp_tighten", "InputMode", "VarMap", "DnnEncodeConfig", "encode_dnn", "CnnEncodeConfig", "encode_cnn",
    "AdversarialConfig", "generate_adversarial", "verify_adversarial", "TrainConfig", "Dataset", "train",
]
