"""Susceptibility estimation for singular models in standard form."""

from .lift import Lift
from .model_zoo import Dataset, ModelFamily, Perturbation, make_monomial_gaussian, perturbation_density, sample_data
from .observables import Observable, ObservableTerm, leibniz_expand, reduce_tangential, restricted_covariance
from .posterior import (QuadratureBackend, QuadratureConfig, Submanifold, TemperedPosteriorSpec, expect,
                        level_set_expect, partition_function)
from .sgld import SgldBackend, SgldConfig, run_chain, sample_mean
from .susceptibility import (CouplingKernel, SusceptibilityResult, chi_ideal_hat, chi_pop_ren, chi_ren_hat,
                             per_sample_susceptibility)
from .asymptotics import fit_scaling, fluctuation_function, scaling_law
from .patterning import pattern, ridge_error, ridge_inverse

__version__ = "0.1.0"
