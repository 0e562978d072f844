"""catdep: dependence exploration for categorical covariates.

Clusters subjects with a truncated Dirichlet-process mixture carrying
per-cluster variable-selection switches, condenses the selection trace
into a co-selection edge-weight matrix, and uses that matrix to steer a
reversible-jump search over graphical Poisson log-linear models.  Exact
brute-force oracles verify the marginal-independence results the pipeline
leans on.
"""

from . import data, dpcluster, loglinear, oracle, profiles, search, simulate, tgamma
from .data import CategoricalDataset, ContingencyTable, build_table, marginals
from .dpcluster import ClusterTrace, PriorConfig, run_chain
from .errors import ConfigError, NonConvergenceError, NumericalError
from .loglinear import Graph, LogLinearModel, fit, model_count
from .search import SearchConfig, run_search
from .simulate import GeneratorSpec, builtin_specs, generate
from .tgamma import TGammaMatrix, accumulate

__version__ = "0.1.0"
