from .builder import BuildParams, VariableMap, build  # noqa
from .dataset import Dataset, Image, generate_canonical  # noqa
from .evaluator import EvalReport, TrainedNetwork, decode, evaluate, forward  # noqa
from .qubo import QuboModel  # noqa
from .topology import Topology, convolutional, fully_connected, parse_architecture  # noqa
