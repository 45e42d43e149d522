"""Factored pool-based active learning over combinatorial product spaces."""

from salsa.acquisition import AcquisitionStrategy, estimate_acquisition_probability, sample_round, select_ranked
from salsa.config import RunConfig, load_config
from salsa.driver import run, run_pool_al, run_random_baseline, run_salsa, run_tabular_ts
from salsa.oracle import ScoreLedger, brute_force_ground_truth, make_oracle, score_batch
from salsa.space import Candidate, ProductSpace, SynthonSet, build_space, generate_space, subsample
from salsa.surrogate import MveRegressor, SynthonSurrogate, TabularGaussianModel, mve_loss

__version__ = "0.1.0"
