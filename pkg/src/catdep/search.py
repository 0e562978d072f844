"""Model-space MCMC over graphs with co-selection-informed edge proposals.

Each iteration is a within-model parameter refresh with probability 0.60,
otherwise one of add / remove / swap an edge, chosen uniformly.  Edge
proposals are weighted: additions by the co-selection weight of the
candidate pair plus a small floor, removals by one minus that weight plus
the floor, swaps by an independent removal draw times an addition draw.
The floor keeps every move possible no matter how lopsided the weights,
so the chain stays irreducible.  Four strategies set where the weights
come from per between-model proposal:

    uniform          every candidate equally likely (flat weights)
    cluster_specific co-selection weights always
    combined_30_10   flat weights 75% of between-model proposals, else co-selection
    combined_20_20   an even 50/50 split

Two kernels share the move machinery.  `marginal` scores graphs by their
Laplace marginal likelihood, so between-model acceptance is
min(1, ml'/ml * q_rev/q_fwd) under the uniform graph prior and the refresh
is a no-op.  `rj` keeps the coefficient vector in the state and proposes
coefficients from the Laplace approximation of the destination model's
posterior -- a trans-dimensional independence sampler whose stationary
model frequencies match the marginal kernel up to Monte Carlo error.

Acceptance rates are reported over attempted between-model proposals.
Every between-model attempt records its forward and reverse proposal
probabilities so reversibility can be replayed exactly from the trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .data import CategoricalDataset, ContingencyTable, build_table
from .errors import ConfigError, NumericalError
from .loglinear import Graph, ModelEvaluator
from .tgamma import TGammaMatrix

STRATEGY_ALIASES = {
    "a": "uniform",
    "b": "cluster_specific",
    "c": "combined_30_10",
    "d": "combined_20_20",
}
# probability that a between-model proposal uses co-selection weights
_TGAMMA_SHARE = {
    "uniform": 0.0,
    "cluster_specific": 1.0,
    "combined_30_10": 0.25,   # 10% of all iterations out of the 40% between-model
    "combined_20_20": 0.5,
}


@dataclass(frozen=True)
class SearchConfig:
    iters: int
    strategy: str = "uniform"
    tgamma: TGammaMatrix | None = None
    burnin: int = 0
    seed: int = 0
    kernel: str = "marginal"
    within_model_fraction: float = 0.60
    eps: float = 1e-6
    prior_variance_scale: float = 1.0

    def __post_init__(self):
        strategy = STRATEGY_ALIASES.get(self.strategy, self.strategy)
        if strategy not in _TGAMMA_SHARE:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        object.__setattr__(self, "strategy", strategy)
        if strategy != "uniform" and self.tgamma is None:
            raise ConfigError(f"strategy {strategy!r} needs a co-selection matrix")
        if self.kernel not in ("marginal", "rj"):
            raise ConfigError(f"kernel must be 'marginal' or 'rj', not {self.kernel!r}")
        if not 0.0 <= self.within_model_fraction <= 1.0:
            raise ConfigError("within_model_fraction must lie in [0, 1]")
        if self.iters < 1:
            raise ConfigError("iters must be positive")
        if self.burnin < 0 or self.burnin >= self.iters:
            raise ConfigError("burnin must lie in [0, iters)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")


def strategy_mix(strategy: str, rng: np.random.Generator) -> str:
    """Weighting scheme for one between-model proposal: 'uniform' or 'tgamma'."""
    strategy = STRATEGY_ALIASES.get(strategy, strategy)
    share = _TGAMMA_SHARE[strategy]
    if share == 0.0:
        return "uniform"
    if share == 1.0:
        return "tgamma"
    return "tgamma" if rng.random() < share else "uniform"


# ---------------------------------------------------------------------------
# edge proposals
# ---------------------------------------------------------------------------

def _weighted_draw(weights: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    probs = weights / weights.sum()
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    idx = min(idx, len(probs) - 1)
    return idx, float(probs[idx])


def _add_weights(graph: Graph, matrix: TGammaMatrix, eps: float):
    cand = graph.absent_edges()
    idx = np.array(cand, dtype=np.int64).reshape(-1, 2)
    return cand, matrix.values[idx[:, 0], idx[:, 1]] + eps


def _remove_weights(graph: Graph, matrix: TGammaMatrix, eps: float):
    cand = graph.edges
    idx = np.array(cand, dtype=np.int64).reshape(-1, 2)
    return cand, (1.0 - matrix.values[idx[:, 0], idx[:, 1]]) + eps


def propose_edge_add(
    graph: Graph, matrix: TGammaMatrix, rng: np.random.Generator, eps: float = 1e-6
) -> tuple[tuple[int, int], float]:
    """Sample an absent edge with probability proportional to weight + eps."""
    cand, weights = _add_weights(graph, matrix, eps)
    if not cand:
        raise ConfigError("graph is complete; nothing to add")
    idx, prob = _weighted_draw(weights, rng)
    return cand[idx], prob


def propose_edge_remove(
    graph: Graph, matrix: TGammaMatrix, rng: np.random.Generator, eps: float = 1e-6
) -> tuple[tuple[int, int], float]:
    """Sample a present edge with probability proportional to (1 - weight) + eps."""
    cand, weights = _remove_weights(graph, matrix, eps)
    if not cand:
        raise ConfigError("graph has no edges; nothing to remove")
    idx, prob = _weighted_draw(weights, rng)
    return cand[idx], prob


def propose_swap(
    graph: Graph, matrix: TGammaMatrix, rng: np.random.Generator, eps: float = 1e-6
) -> tuple[tuple[tuple[int, int], tuple[int, int]], float]:
    """Independent removal and addition draws; probability is their product."""
    edge_out, p_out = propose_edge_remove(graph, matrix, rng, eps)
    edge_in, p_in = propose_edge_add(graph, matrix, rng, eps)
    return (edge_out, edge_in), p_out * p_in


def edge_proposal_probability(
    graph: Graph,
    matrix: TGammaMatrix,
    kind: str,
    edge_out: tuple[int, int] | None,
    edge_in: tuple[int, int] | None,
    eps: float = 1e-6,
) -> float:
    """Exact probability the given move would be proposed from `graph`.

    Used for the reverse term of the acceptance ratio and for replaying
    recorded proposals.
    """
    def prob_of(cand, weights, edge) -> float:
        total = weights.sum()
        pos = cand.index(tuple(sorted(edge)))
        return float(weights[pos] / total)

    if kind == "add":
        cand, weights = _add_weights(graph, matrix, eps)
        return prob_of(cand, weights, edge_in)
    if kind == "remove":
        cand, weights = _remove_weights(graph, matrix, eps)
        return prob_of(cand, weights, edge_out)
    if kind == "swap":
        cand_r, w_r = _remove_weights(graph, matrix, eps)
        cand_a, w_a = _add_weights(graph, matrix, eps)
        return prob_of(cand_r, w_r, edge_out) * prob_of(cand_a, w_a, edge_in)
    raise ConfigError(f"unknown move kind {kind!r}")


_REVERSE_KIND = {"add": "remove", "remove": "add", "swap": "swap"}


# ---------------------------------------------------------------------------
# chain state and a single step
# ---------------------------------------------------------------------------

class ProposalRecord(NamedTuple):
    iteration: int
    kind: str
    scheme: str
    edge_out: tuple[int, int] | None
    edge_in: tuple[int, int] | None
    q_fwd: float
    q_rev: float
    log_ml_from: float
    log_ml_to: float
    accepted: bool


@dataclass
class ChainState:
    graph: Graph
    evaluator: ModelEvaluator
    kernel: str
    log_ml: float = 0.0
    beta: np.ndarray | None = None
    log_post: float = 0.0
    _laplace: dict = field(default_factory=dict)

    @classmethod
    def start(cls, graph: Graph, evaluator: ModelEvaluator, kernel: str) -> "ChainState":
        state = cls(graph=graph, evaluator=evaluator, kernel=kernel)
        state.log_ml = evaluator.log_marginal(graph)
        if kernel == "rj":
            state.beta = evaluator.fit(graph).beta_mode.copy()
            state.log_post = evaluator.posterior(graph).value_grad(state.beta)[0]
        return state

    def laplace(self, graph: Graph):
        """(mode, cholesky of -Hessian, log det) for the graph's posterior."""
        key = graph.edges
        hit = self._laplace.get(key)
        if hit is None:
            result = self.evaluator.fit(graph)
            neg_h = self.evaluator.posterior(graph).neg_hessian(result.beta_mode)
            chol = np.linalg.cholesky(neg_h)
            logdet = 2.0 * float(np.log(np.diag(chol)).sum())
            hit = (result.beta_mode, chol, logdet)
            self._laplace[key] = hit
        return hit

    def draw_coefficients(self, graph: Graph, rng) -> tuple[np.ndarray, float]:
        mode, chol, logdet = self.laplace(graph)
        noise = rng.standard_normal(mode.shape[0])
        beta = mode + np.linalg.solve(chol.T, noise)
        return beta, self.proposal_logpdf(graph, beta)

    def proposal_logpdf(self, graph: Graph, beta: np.ndarray) -> float:
        mode, chol, logdet = self.laplace(graph)
        v = chol.T @ (beta - mode)
        k = mode.shape[0]
        return -0.5 * k * math.log(2 * math.pi) + 0.5 * logdet - 0.5 * float(v @ v)


def mcmc_step(
    state: ChainState,
    config: SearchConfig,
    rng: np.random.Generator,
    flat: TGammaMatrix,
    iteration: int,
) -> tuple[str, bool, ProposalRecord | None]:
    """Advance one iteration; returns (move kind, accepted, proposal record)."""
    if rng.random() < config.within_model_fraction:
        if state.kernel == "marginal":
            return "within", True, None
        beta_new, q_new = state.draw_coefficients(state.graph, rng)
        post = state.evaluator.posterior(state.graph)
        lp_new = post.value_grad(beta_new)[0]
        q_old = state.proposal_logpdf(state.graph, state.beta)
        if math.log(rng.random()) < (lp_new - q_new) - (state.log_post - q_old):
            state.beta, state.log_post = beta_new, lp_new
            return "within", True, None
        return "within", False, None

    kind = ("add", "remove", "swap")[int(rng.integers(3))]
    graph = state.graph
    can_add = graph.n_edges < graph.n_nodes * (graph.n_nodes - 1) // 2
    can_remove = graph.n_edges > 0
    feasible = {"add": can_add, "remove": can_remove, "swap": can_add and can_remove}
    if not feasible[kind]:
        return kind, False, None

    scheme = strategy_mix(config.strategy, rng)
    matrix = config.tgamma if scheme == "tgamma" else flat

    if kind == "add":
        edge_in, q_fwd = propose_edge_add(graph, matrix, rng, config.eps)
        edge_out = None
        new_graph = graph.add_edge(edge_in)
    elif kind == "remove":
        edge_out, q_fwd = propose_edge_remove(graph, matrix, rng, config.eps)
        edge_in = None
        new_graph = graph.remove_edge(edge_out)
    else:
        (edge_out, edge_in), q_fwd = propose_swap(graph, matrix, rng, config.eps)
        new_graph = graph.remove_edge(edge_out).add_edge(edge_in)

    q_rev = edge_proposal_probability(
        new_graph, matrix, _REVERSE_KIND[kind],
        edge_out=edge_in, edge_in=edge_out, eps=config.eps,
    )

    try:
        new_ml = state.evaluator.log_marginal(new_graph)
    except NumericalError:
        record = ProposalRecord(iteration, kind, scheme, edge_out, edge_in,
                                q_fwd, q_rev, state.log_ml, -np.inf, False)
        return kind, False, record

    if state.kernel == "marginal":
        log_acc = (new_ml - state.log_ml) + math.log(q_rev) - math.log(q_fwd)
    else:
        beta_new, q_beta_new = state.draw_coefficients(new_graph, rng)
        lp_new = state.evaluator.posterior(new_graph).value_grad(beta_new)[0]
        q_beta_old = state.proposal_logpdf(state.graph, state.beta)
        log_acc = (
            (lp_new - q_beta_new)
            - (state.log_post - q_beta_old)
            + math.log(q_rev)
            - math.log(q_fwd)
        )

    accepted = math.log(rng.random()) < log_acc
    record = ProposalRecord(iteration, kind, scheme, edge_out, edge_in,
                            q_fwd, q_rev, state.log_ml, new_ml, accepted)
    if accepted:
        state.graph = new_graph
        state.log_ml = new_ml
        if state.kernel == "rj":
            state.beta, state.log_post = beta_new, lp_new
    return kind, accepted, record


# ---------------------------------------------------------------------------
# full runs and experiment summaries
# ---------------------------------------------------------------------------

@dataclass
class SearchTrace:
    graph_keys: list[str]          # interned canonical edge strings
    graph_index: np.ndarray        # (iters + 1,) state per iteration, 0 = start
    move_kinds: list[str]          # per iteration
    accepted: np.ndarray           # (iters,) bool
    proposals: list[ProposalRecord]
    config: SearchConfig
    names: tuple[str, ...]

    @property
    def iters(self) -> int:
        return self.graph_index.shape[0] - 1

    def acceptance_rate(self) -> float:
        """Accepted between-model moves over attempted ones, as a percentage."""
        if not self.proposals:
            return 0.0
        acc = sum(1 for r in self.proposals if r.accepted)
        return 100.0 * acc / len(self.proposals)

    def between_model_fraction(self) -> float:
        moves = sum(1 for k in self.move_kinds if k != "within")
        return moves / self.iters

    def visit_counts(self, burnin: int | None = None) -> dict[str, int]:
        """Occupancy per graph over iterations burnin+1 .. iters."""
        burnin = self.config.burnin if burnin is None else burnin
        counts = np.bincount(
            self.graph_index[burnin + 1:], minlength=len(self.graph_keys)
        )
        return {
            self.graph_keys[i]: int(c) for i, c in enumerate(counts) if c > 0
        }

    def visit_frequencies(self, burnin: int | None = None) -> dict[str, float]:
        counts = self.visit_counts(burnin)
        total = sum(counts.values())
        return {k: v / total for k, v in counts.items()}

    def first_hit(self, key: str) -> int | None:
        """Iteration of the first visit to the graph (0 = initial state)."""
        try:
            idx = self.graph_keys.index(key)
        except ValueError:
            return None
        hits = np.flatnonzero(self.graph_index == idx)
        return int(hits[0]) if hits.size else None

    def top_models(self, k: int = 3, burnin: int | None = None) -> list[tuple[str, float]]:
        freqs = self.visit_frequencies(burnin)
        return sorted(freqs.items(), key=lambda kv: -kv[1])[:k]


def run_search(
    source: ContingencyTable | CategoricalDataset,
    config: SearchConfig,
    evaluator: ModelEvaluator | None = None,
) -> SearchTrace:
    """Run one chain from the empty graph; deterministic given config.seed."""
    table = source if isinstance(source, ContingencyTable) else build_table(source)
    p = len(table.levels)
    if config.tgamma is not None and config.tgamma.p_count != p:
        raise ConfigError(
            f"co-selection matrix covers {config.tgamma.p_count} covariates, "
            f"table has {p}"
        )
    if evaluator is None:
        evaluator = ModelEvaluator(table, config.prior_variance_scale)
    rng = np.random.default_rng(config.seed)
    flat = TGammaMatrix.flat(p)
    state = ChainState.start(Graph.empty(p), evaluator, config.kernel)

    keys: list[str] = [state.graph.key()]
    intern: dict[str, int] = {keys[0]: 0}
    index = np.empty(config.iters + 1, dtype=np.int32)
    index[0] = 0
    move_kinds: list[str] = []
    accepted = np.zeros(config.iters, dtype=bool)
    proposals: list[ProposalRecord] = []

    for t in range(1, config.iters + 1):
        kind, acc, record = mcmc_step(state, config, rng, flat, t)
        move_kinds.append(kind)
        accepted[t - 1] = acc
        if record is not None:
            proposals.append(record)
        key = state.graph.key()
        slot = intern.get(key)
        if slot is None:
            slot = len(keys)
            intern[key] = slot
            keys.append(key)
        index[t] = slot

    return SearchTrace(
        graph_keys=keys,
        graph_index=index,
        move_kinds=move_kinds,
        accepted=accepted,
        proposals=proposals,
        config=config,
        names=table.column_names(),
    )


def run_many(
    source: ContingencyTable | CategoricalDataset,
    config: SearchConfig,
    runs: int,
) -> list[SearchTrace]:
    """Independent chains with seeds config.seed, config.seed+1, ...;
    Laplace fits are shared across the chains."""
    table = source if isinstance(source, ContingencyTable) else build_table(source)
    evaluator = ModelEvaluator(table, config.prior_variance_scale)
    return [
        run_search(table, replace(config, seed=config.seed + i), evaluator=evaluator)
        for i in range(runs)
    ]


def aggregate_best_key(traces: list[SearchTrace]) -> str:
    """Most visited graph across all runs (post burn-in)."""
    pooled: dict[str, int] = {}
    for tr in traces:
        for k, v in tr.visit_counts().items():
            pooled[k] = pooled.get(k, 0) + v
    return max(pooled.items(), key=lambda kv: kv[1])[0]


def mixing_summary(traces: list[SearchTrace], best_key: str | None = None) -> dict:
    """Per-strategy mixing report over repeated runs.

    Iterations to the best graph use the supplied key, or fall back to the
    most visited graph pooled over the runs.  Runs that never hit count as
    infinity in the quartiles.
    """
    if not traces:
        raise ConfigError("need at least one trace")
    if best_key is None:
        best_key = aggregate_best_key(traces)
    hits = np.array([
        tr.first_hit(best_key) if tr.first_hit(best_key) is not None else np.inf
        for tr in traces
    ], dtype=np.float64)
    freqs = [tr.visit_frequencies().get(best_key, 0.0) for tr in traces]
    return {
        "strategy": traces[0].config.strategy,
        "kernel": traces[0].config.kernel,
        "runs": len(traces),
        "best_key": best_key,
        "acceptance_pct": float(np.mean([tr.acceptance_rate() for tr in traces])),
        "median_iters_to_best": float(np.median(hits)),
        "q1_iters_to_best": float(np.quantile(hits, 0.25)),
        "q3_iters_to_best": float(np.quantile(hits, 0.75)),
        "missed_runs": int(np.isinf(hits).sum()),
        "best_frequency": float(np.mean(freqs)),
    }
