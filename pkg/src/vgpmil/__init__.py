"""Sparse Gaussian-process multiple-instance learning with a grid-Laplacian
coupling between neighbouring instances of a bag."""
from ._backend import backend_name
from .bags import Bag, MilDataset, block_sigma, build_coupling, coupled_covariance
from .errors import InputError, NumericalError, OracleInfeasibleError, VgpmilError
from .kernels import KernelConfig, gram, kmeans_inducing, psd_solve, se_kernel
from .predict import (evaluate, predict_bag, predict_dataset, predict_instances,
                      predict_latent, predict_m)
from .synth import SyntheticSpec, generate_synthetic
from .truncnorm import (mc_trunc_oracle, neg_trunc_mean, negative_orthant_prob,
                        positive_bag_expectations)
from .vi import FitConfig, TrainedModel, fit, update_qm, update_qu

__version__ = "0.1.0"
