"""Graphical Poisson log-linear models over contingency tables.

A graph over the covariates induces a hierarchical log-linear model whose
interaction terms are exactly the non-empty subsets of its maximal cliques
(intercept and all main effects always included).  Cells are modelled as
independent Poisson counts with log mean X beta.  Coefficients use
corner-point (treatment) coding with level 0 as the baseline, which keeps
the design full rank for any hierarchical term set.

Priors: flat (improper) on the intercept, zero-mean normal on the remaining
coefficients with covariance  n_total * (X'X)^{-1}  restricted to the
non-intercept block -- a unit-information choice whose precision equals the
centred cross-product of the design divided by the total count.  Marginal
likelihoods come from a Laplace approximation at the posterior mode, found
by damped Newton with the analytic Hessian.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .data import MAX_TABLE_CELLS, ContingencyTable, default_names
from .errors import ConfigError, NonConvergenceError, NumericalError


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

Edge = tuple[int, int]


def _normalize_edges(n_nodes: int, edges) -> tuple[Edge, ...]:
    seen = set()
    out = []
    for e in edges:
        a, b = int(e[0]), int(e[1])
        if a == b:
            raise ConfigError(f"self-loop on node {a}")
        if a > b:
            a, b = b, a
        if not (0 <= a < n_nodes and 0 <= b < n_nodes):
            raise ConfigError(f"edge ({a},{b}) outside 0..{n_nodes - 1}")
        if (a, b) in seen:
            raise ConfigError(f"duplicate edge ({a},{b})")
        seen.add((a, b))
        out.append((a, b))
    return tuple(sorted(out))


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes 0..n_nodes-1."""

    n_nodes: int
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ConfigError("graph needs at least one node")
        object.__setattr__(self, "edges", _normalize_edges(self.n_nodes, self.edges))

    @classmethod
    def empty(cls, n_nodes: int) -> "Graph":
        return cls(n_nodes, ())

    @classmethod
    def complete(cls, n_nodes: int) -> "Graph":
        return cls(n_nodes, tuple(itertools.combinations(range(n_nodes), 2)))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def has_edge(self, e: Edge) -> bool:
        a, b = min(e), max(e)
        return (a, b) in set(self.edges)

    def absent_edges(self) -> tuple[Edge, ...]:
        present = set(self.edges)
        return tuple(
            e for e in itertools.combinations(range(self.n_nodes), 2)
            if e not in present
        )

    def add_edge(self, e: Edge) -> "Graph":
        a, b = min(e), max(e)
        return Graph(self.n_nodes, self.edges + ((a, b),))

    def remove_edge(self, e: Edge) -> "Graph":
        a, b = min(e), max(e)
        if (a, b) not in set(self.edges):
            raise ConfigError(f"edge ({a},{b}) not present")
        return Graph(self.n_nodes, tuple(x for x in self.edges if x != (a, b)))

    def key(self) -> str:
        """Canonical id string, stable across runs."""
        return ";".join(f"{a}-{b}" for a, b in self.edges) or "-"


def model_count(p_count: int) -> int:
    """Number of graphical models on p_count nodes: 2 ** C(p_count, 2)."""
    if p_count < 2:
        raise ConfigError("need at least two covariates")
    return 2 ** (p_count * (p_count - 1) // 2)


def graph_components(graph: Graph) -> list[tuple[int, ...]]:
    """Connected components as sorted node tuples, ordered by smallest node."""
    parent = list(range(graph.n_nodes))

    def find(v: int) -> int:
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for a, b in graph.edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra
    groups: dict[int, list[int]] = {}
    for v in range(graph.n_nodes):
        groups.setdefault(find(v), []).append(v)
    return sorted(
        (tuple(sorted(nodes)) for nodes in groups.values()), key=lambda t: t[0]
    )


def maximal_cliques(graph: Graph) -> tuple[tuple[int, ...], ...]:
    """All maximal cliques, each sorted, in sorted order.

    Bron-Kerbosch with pivoting; isolated nodes come out as singletons.
    """
    adj = {v: set() for v in range(graph.n_nodes)}
    for a, b in graph.edges:
        adj[a].add(b)
        adj[b].add(a)

    cliques: list[tuple[int, ...]] = []

    def extend(r: set, p: set, x: set) -> None:
        if not p and not x:
            cliques.append(tuple(sorted(r)))
            return
        pivot = max(p | x, key=lambda v: len(adj[v] & p))
        for v in list(p - adj[pivot]):
            extend(r | {v}, p & adj[v], x & adj[v])
            p.remove(v)
            x.add(v)

    extend(set(), set(range(graph.n_nodes)), set())
    return tuple(sorted(cliques))


# ---------------------------------------------------------------------------
# model strings  (cliques joined by '+', members joined by '' or '.')
# ---------------------------------------------------------------------------

def model_string(graph: Graph, names: tuple[str, ...] | None = None) -> str:
    names = names if names is not None else default_names(graph.n_nodes)
    sep = "" if all(len(s) == 1 for s in names) else "."
    return "+".join(sep.join(names[v] for v in c) for c in maximal_cliques(graph))


def parse_model_string(text: str, names: tuple[str, ...]) -> Graph:
    """Inverse of model_string for the given covariate names."""
    idx = {s: v for v, s in enumerate(names)}
    single = all(len(s) == 1 for s in names)
    edges = set()
    mentioned = set()
    for token in text.split("+"):
        token = token.strip()
        if not token:
            raise ConfigError(f"empty clique in model string {text!r}")
        parts = list(token) if single else token.split(".")
        try:
            members = [idx[s] for s in parts]
        except KeyError as exc:
            raise ConfigError(f"unknown covariate {exc} in model string") from None
        mentioned.update(members)
        edges.update(itertools.combinations(sorted(members), 2))
    return Graph(len(names), tuple(sorted(edges)))


# ---------------------------------------------------------------------------
# model terms and design matrix
# ---------------------------------------------------------------------------

def hierarchical_terms(graph: Graph) -> tuple[tuple[int, ...], ...]:
    """Intercept, main effects and every subset of each maximal clique."""
    terms = {()}
    for clique in maximal_cliques(graph):
        for k in range(1, len(clique) + 1):
            terms.update(itertools.combinations(clique, k))
    return tuple(sorted(terms, key=lambda t: (len(t), t)))


def term_width(term: tuple[int, ...], levels: tuple[int, ...]) -> int:
    """Design columns a term occupies under corner coding."""
    width = 1
    for p in term:
        width *= levels[p] - 1
    return width


def n_parameters(graph: Graph, levels: tuple[int, ...]) -> int:
    """Design column count without materializing the design."""
    return sum(term_width(t, levels) for t in hierarchical_terms(graph))


def cell_lattice(levels: tuple[int, ...]) -> np.ndarray:
    """(n_cells, P) level codes in table order (last covariate fastest)."""
    n_cells = int(np.prod(levels, dtype=object))
    if n_cells > MAX_TABLE_CELLS:
        raise ConfigError(
            f"lattice over {levels} has {n_cells} cells (limit {MAX_TABLE_CELLS}); "
            "work over a covariate subset or per graph component"
        )
    return np.stack(np.unravel_index(np.arange(n_cells), levels), axis=1)


def design_matrix(
    terms: tuple[tuple[int, ...], ...], levels: tuple[int, ...]
) -> np.ndarray:
    """Corner-coded design over the full cell lattice.

    Each term contributes one column per combination of non-baseline levels
    of its covariates (level 0 is the baseline); an interaction column is
    the product of the matching main-effect indicator columns.  Column
    blocks follow the term order; within a block the last covariate's level
    varies fastest.
    """
    cells = cell_lattice(levels)
    cols = []
    for term in terms:
        if not term:
            cols.append(np.ones(cells.shape[0]))
            continue
        for combo in itertools.product(*[range(1, levels[p]) for p in term]):
            col = np.ones(cells.shape[0])
            for p, lev in zip(term, combo):
                col = col * (cells[:, p] == lev)
            cols.append(col)
    x = np.column_stack(cols)
    if np.linalg.matrix_rank(x) != x.shape[1]:
        raise NumericalError(
            "rank-deficient design matrix; corner coding of a hierarchical "
            "term set should be full rank (internal bug)"
        )
    return x


@dataclass(frozen=True)
class LogLinearModel:
    """A graph together with its term list and corner-coded design."""

    graph: Graph
    levels: tuple[int, ...]
    terms: tuple[tuple[int, ...], ...] = field(init=False)
    design: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.levels) != self.graph.n_nodes:
            raise ConfigError("levels length must match the graph's node count")
        terms = hierarchical_terms(self.graph)
        x = design_matrix(terms, self.levels)
        x.setflags(write=False)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "design", x)

    @property
    def n_params(self) -> int:
        return self.design.shape[1]

    def column_terms(self) -> list[tuple[int, ...]]:
        """The term owning each design column, in column order."""
        out = []
        for term in self.terms:
            out.extend([term] * term_width(term, self.levels))
        return out


# ---------------------------------------------------------------------------
# unit-information prior, posterior, Laplace fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    beta_mode: np.ndarray
    log_posterior: float
    hessian_logdet: float       # log det of the negated Hessian at the mode
    log_marginal: float
    n_iter: int


def _prior_precision(x: np.ndarray, n_total: int, variance_scale: float) -> np.ndarray:
    """Precision of the non-intercept block under the unit-information prior.

    covariance = variance_scale * n_total * [(X'X)^{-1}] without the
    intercept row/column; by block inversion its precision equals the
    centred cross-product of the non-intercept columns over n_total.
    """
    xm = x[:, 1:]
    centred = xm - xm.mean(axis=0, keepdims=True)
    return (centred.T @ centred) / (n_total * variance_scale)


class _Posterior:
    """Poisson log-posterior for one model/table pair (cell factorials dropped).

    The dropped sum of log-factorials is constant across models for a fixed
    table, so Laplace marginal likelihoods remain comparable.
    """

    def __init__(
        self,
        model: LogLinearModel,
        table: ContingencyTable,
        prior_variance_scale: float = 1.0,
    ):
        if table.levels != model.levels:
            raise ConfigError("table and model are over different level lattices")
        self.x = model.design
        self.y = table.counts.astype(np.float64)
        self.k = self.x.shape[1]
        self.prior_prec = _prior_precision(self.x, table.total, prior_variance_scale)
        sign, logdet = np.linalg.slogdet(self.prior_prec)
        if self.k > 1 and sign <= 0:
            raise NumericalError("prior precision not positive definite")
        # log normalizing constant of the proper (non-intercept) prior block
        self.prior_const = 0.5 * (logdet - (self.k - 1) * math.log(2 * math.pi))

    def value_grad(self, beta: np.ndarray) -> tuple[float, np.ndarray]:
        eta = self.x @ beta
        mu = np.exp(eta)
        ll = float(self.y @ eta - mu.sum())
        rest = beta[1:]
        quad = float(rest @ self.prior_prec @ rest)
        val = ll + self.prior_const - 0.5 * quad
        grad = self.x.T @ (self.y - mu)
        grad[1:] -= self.prior_prec @ rest
        if not np.isfinite(val):
            return -np.inf, grad
        return val, grad

    def neg_hessian(self, beta: np.ndarray) -> np.ndarray:
        mu = np.exp(self.x @ beta)
        h = (self.x * mu[:, None]).T @ self.x
        h[1:, 1:] += self.prior_prec
        return h


def log_posterior(
    model: LogLinearModel,
    table: ContingencyTable,
    beta: np.ndarray,
    prior_variance_scale: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Log posterior density (up to the fixed table constant) and its gradient."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (model.n_params,):
        raise ConfigError(f"beta must have length {model.n_params}")
    post = _Posterior(model, table, prior_variance_scale)
    val, grad = post.value_grad(beta)
    if not np.isfinite(val):
        raise NumericalError("non-finite log posterior")
    return val, grad


def fit(
    model: LogLinearModel,
    table: ContingencyTable,
    prior_variance_scale: float = 1.0,
    grad_tol: float = 1e-8,
    max_iter: int = 200,
) -> FitResult:
    """Posterior mode by damped Newton plus the Laplace marginal likelihood."""
    post = _Posterior(model, table, prior_variance_scale)
    beta = np.zeros(model.n_params)
    beta[0] = math.log(max(table.total, 1) / table.n_cells)
    val, grad = post.value_grad(beta)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        gnorm = float(np.abs(grad).max())
        if gnorm < grad_tol:
            break
        h = post.neg_hessian(beta)
        try:
            step = np.linalg.solve(h, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, grad, rcond=None)[0]
        # near the mode the value improvement drops below float resolution,
        # so a shrinking gradient norm also counts as progress
        noise = 1e-9 * (1.0 + abs(val))
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            cand_val, cand_grad = post.value_grad(cand)
            better_val = cand_val > val - noise
            better_grad = np.isfinite(cand_val) and float(np.abs(cand_grad).max()) < gnorm
            if better_val or better_grad:
                beta, val, grad = cand, cand_val, cand_grad
                break
            t *= 0.5
        else:
            raise NonConvergenceError(
                f"line search stalled at gradient norm {gnorm:.3g}", gnorm
            )
    else:
        gnorm = float(np.abs(grad).max())
        raise NonConvergenceError(
            f"no convergence in {max_iter} Newton steps "
            f"(gradient norm {gnorm:.3g})",
            gnorm,
        )

    neg_h = post.neg_hessian(beta)
    try:
        chol = np.linalg.cholesky(neg_h)
    except np.linalg.LinAlgError:
        raise NumericalError("Hessian at the mode is not negative definite") from None
    hess_logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    log_marginal = (
        val + 0.5 * model.n_params * math.log(2 * math.pi) - 0.5 * hess_logdet
    )
    return FitResult(
        beta_mode=beta,
        log_posterior=val,
        hessian_logdet=hess_logdet,
        log_marginal=log_marginal,
        n_iter=n_iter,
    )


class ModelEvaluator:
    """Caches models and Laplace fits per graph for one table.

    Reads are safe from multiple threads; insertions happen under the GIL
    one key at a time, so concurrent lookups at worst recompute a value.
    """

    def __init__(self, table: ContingencyTable, prior_variance_scale: float = 1.0):
        self.table = table
        self.levels = table.levels
        self.prior_variance_scale = prior_variance_scale
        self._fits: dict[tuple[Edge, ...], FitResult] = {}
        self._posteriors: dict[tuple[Edge, ...], _Posterior] = {}

    def model(self, graph: Graph) -> LogLinearModel:
        return LogLinearModel(graph=graph, levels=self.levels)

    def posterior(self, graph: Graph) -> "_Posterior":
        key = graph.edges
        hit = self._posteriors.get(key)
        if hit is None:
            hit = _Posterior(self.model(graph), self.table, self.prior_variance_scale)
            self._posteriors[key] = hit
        return hit

    def fit(self, graph: Graph) -> FitResult:
        key = graph.edges
        hit = self._fits.get(key)
        if hit is None:
            hit = fit(self.model(graph), self.table, self.prior_variance_scale)
            self._fits[key] = hit
        return hit

    def log_marginal(self, graph: Graph) -> float:
        return self.fit(graph).log_marginal
