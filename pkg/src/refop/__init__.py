"""Reference neural operators: pushforward of a reference solution plus a learned correction."""

from .geometry import BoxDomain, BoundaryComponent, Geometry, construct_phi, geometric_distance
from .meshinterp import interpolate, pushforward, triangulate
from .pairing import PairMap, pair_knn, pair_natural, prepare_pair, prepare_pairs
from .model import ModelConfig, ReferenceNeuralOperator, daca_linear, daca_quadratic
from .training import TrainConfig, evaluate, loss, rel_l2, train
from .datagen import GenConfig, generate_pairs, solve_poisson

__version__ = "0.1.0"
