"""Piecewise-linear finite elements on the Coxeter-Freudenthal-Kuhn triangulation for weighted gradient forms."""
from .bv import BVFunction, bv_envelopes, jordan_decompose, partition_function
from .densities import BVPerturbedDensity, GaussianDensity, ProductDensity, TabulatedDensity, UniformDensity, density_from_dict
from .forms import FormMatrices, assemble, markov_check, resolvent, semigroup
from .functionals import C_estimate, delta_estimate, mopert_bound, modulus
from .mosco import ConvergenceReport, gaussian_bv_experiment
from .plspace import TentCoefficients, eval_sum, grad_sq_norm, local_average_project, weak_gradient
from .tents import PrimalFunction, catalog, eval_tent, local_basis
from .triangulation import GridSpec, PathSimplex, locate, locate_many, membership

__version__ = "0.1.0"

__all__ = [
    "BVFunction", "bv_envelopes", "jordan_decompose", "partition_function",
    "BVPerturbedDensity", "GaussianDensity", "ProductDensity", "TabulatedDensity", "UniformDensity", "density_from_dict",
    "FormMatrices", "assemble", "markov_check", "resolvent", "semigroup",
    "C_estimate", "delta_estimate", "mopert_bound", "modulus",
    "ConvergenceReport", "gaussian_bv_experiment",
    "TentCoefficients", "eval_sum", "grad_sq_norm", "local_average_project", "weak_gradient",
    "PrimalFunction", "catalog", "eval_tent", "local_basis",
    "GridSpec", "PathSimplex", "locate", "locate_many", "membership",
]
