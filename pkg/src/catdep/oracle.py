"""Exact brute-force verifiers for the clustering/independence results.

A MixtureSpec is a finite switched mixture: cluster weights, per-cluster
selection switches and level probabilities, and reference marginals.  For
the independence results to apply, the reference marginals must equal the
marginals the mixture itself induces, which pins them to

    pi_p(x) * sum_{c: gamma=1} psi_c = sum_{c: gamma=1} psi_c phi_c_p(x)

whenever any cluster selects covariate p (for fully unselected covariates
the marginal is unconstrained).  Random specs are generated that way.

On top of the exact joint distribution the module measures marginal
dependence between covariate pairs and between one covariate and all the
rest, and enumerates the exact graphical-model posterior for small tables
as ground truth for the stochastic search.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .data import ContingencyTable
from .errors import ConfigError, NumericalError
from . import loglinear

MAX_JOINT_CELLS = 1_000_000


@dataclass(frozen=True)
class MixtureSpec:
    psi: np.ndarray           # (C,) cluster weights, sum 1
    gamma: np.ndarray         # (C, P) binary selection switches
    phi: np.ndarray           # (C, P, m_max) cluster level probabilities
    pi: np.ndarray            # (P, m_max) reference marginals
    levels: tuple[int, ...]

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.int8)
        phi = np.asarray(self.phi, dtype=np.float64)
        pi = np.asarray(self.pi, dtype=np.float64)
        levels = tuple(int(m) for m in self.levels)
        c, p = gamma.shape
        if psi.shape != (c,):
            raise ConfigError("psi/gamma shape mismatch")
        if abs(psi.sum() - 1.0) > 1e-12 or psi.min() < 0:
            raise ConfigError("cluster weights must be a probability vector")
        m_max = max(levels)
        if phi.shape != (c, p, m_max) or pi.shape != (p, m_max):
            raise ConfigError("phi/pi shapes inconsistent with levels")
        for j, m in enumerate(levels):
            if np.abs(phi[:, j, :m].sum(axis=1) - 1.0).max() > 1e-12:
                raise ConfigError(f"phi rows for covariate {j} are not simplexes")
            if abs(pi[j, :m].sum() - 1.0) > 1e-12:
                raise ConfigError(f"pi row {j} is not a simplex")
            sel = gamma[:, j] == 1
            if sel.any():
                lhs = psi[sel] @ phi[sel, j, :m]
                rhs = pi[j, :m] * psi[sel].sum()
                if np.abs(lhs - rhs).max() > 1e-9:
                    raise ConfigError(
                        f"pi row {j} is not the marginal the mixture induces"
                    )
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "levels", levels)

    @property
    def n_clusters(self) -> int:
        return self.psi.shape[0]

    @property
    def p_count(self) -> int:
        return self.gamma.shape[1]

    def effective(self) -> np.ndarray:
        """(C, P, m_max) switched level probabilities."""
        g = self.gamma[:, :, None]
        return g * self.phi + (1 - g) * self.pi[None, :, :]


def random_spec(
    rng: np.random.Generator,
    p_count: int = 3,
    levels: tuple[int, ...] | None = None,
    n_clusters: int = 4,
    disjoint_pair: tuple[int, int] | None = None,
    isolated: int | None = None,
    never_selected: int | None = None,
) -> MixtureSpec:
    """Draw a random consistent spec, optionally constrained.

    disjoint_pair=(p, q): no cluster selects both p and q.
    isolated=p: any cluster selecting p selects nothing else.
    never_selected=p: no cluster selects p at all.
    """
    if levels is None:
        levels = tuple(int(m) for m in rng.integers(2, 4, size=p_count))
    m_max = max(levels)
    c = n_clusters
    psi = rng.dirichlet(np.ones(c))
    gamma = (rng.random((c, p_count)) < 0.6).astype(np.int8)
    if disjoint_pair is not None:
        p, q = disjoint_pair
        both = (gamma[:, p] == 1) & (gamma[:, q] == 1)
        drop_p = rng.random(c) < 0.5
        gamma[both & drop_p, p] = 0
        gamma[both & ~drop_p, q] = 0
    if isolated is not None:
        sel = gamma[:, isolated] == 1
        gamma[sel, :] = 0
        gamma[sel, isolated] = 1
    if never_selected is not None:
        gamma[:, never_selected] = 0

    phi = np.zeros((c, p_count, m_max))
    pi = np.zeros((p_count, m_max))
    for j, m in enumerate(levels):
        phi[:, j, :m] = rng.dirichlet(np.ones(m), size=c)
        sel = gamma[:, j] == 1
        if sel.any():
            pi[j, :m] = (psi[sel] @ phi[sel, j, :m]) / psi[sel].sum()
        else:
            pi[j, :m] = rng.dirichlet(np.ones(m))
    return MixtureSpec(psi=psi, gamma=gamma, phi=phi, pi=pi, levels=levels)


def joint_distribution(spec: MixtureSpec, subset: list[int]) -> np.ndarray:
    """Exact joint probability table over the covariates in `subset`.

    The result has one axis per subset entry, in the given order.
    """
    subset = [int(p) for p in subset]
    if not subset:
        raise ConfigError("subset must be non-empty")
    shape = tuple(spec.levels[p] for p in subset)
    if int(np.prod(shape)) > MAX_JOINT_CELLS:
        raise ConfigError(f"joint over {shape} exceeds {MAX_JOINT_CELLS} cells")
    eff = spec.effective()
    out = np.zeros(shape)
    for c in range(spec.n_clusters):
        block = np.array(spec.psi[c])
        for p in subset:
            block = np.multiply.outer(block, eff[c, p, : spec.levels[p]])
        out += block
    return out


def dependence_gap(spec: MixtureSpec, p: int, q: int) -> float:
    """max over level pairs of |P(x_p, x_q) - P(x_p) P(x_q)|."""
    if p == q:
        raise ConfigError("need two distinct covariates")
    joint = joint_distribution(spec, [p, q])
    marg_p = joint_distribution(spec, [p])
    marg_q = joint_distribution(spec, [q])
    return float(np.abs(joint - np.multiply.outer(marg_p, marg_q)).max())


def set_independence_gap(spec: MixtureSpec, p: int) -> float:
    """max over cells of |P(x_p, rest) - P(x_p) P(rest)|."""
    order = [p] + [q for q in range(spec.p_count) if q != p]
    joint = joint_distribution(spec, order)
    marg_p = joint.reshape(joint.shape[0], -1).sum(axis=1)
    rest = joint.sum(axis=0)
    prod = marg_p.reshape((-1,) + (1,) * (joint.ndim - 1)) * rest[None, ...]
    return float(np.abs(joint - prod).max())


def selection_overlap(spec: MixtureSpec, p: int, q: int) -> int:
    """Number of clusters selecting both covariates."""
    return int((spec.gamma[:, p] * spec.gamma[:, q]).sum())


def pivotal_identity_residual(spec: MixtureSpec, p: int) -> float:
    """Residual of  sum_{c selecting p} psi_c phi_c_p = pi_p * (selected mass).

    This is the step that forces the factorization behind the independence
    results; it must vanish for any consistent spec with p selected somewhere.
    """
    sel = spec.gamma[:, p] == 1
    if not sel.any():
        return 0.0
    m = spec.levels[p]
    lhs = spec.psi[sel] @ spec.phi[sel, p, :m]
    rhs = spec.pi[p, :m] * spec.psi[sel].sum()
    return float(np.abs(lhs - rhs).max())


def xor_witness() -> MixtureSpec:
    """Three binary covariates: pairwise independent, jointly dependent.

    Four equally weighted clusters put all mass on the even-parity level
    triples, so each pair is uniform while the triple is constrained.
    """
    cells = [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)]
    c = len(cells)
    phi = np.zeros((c, 3, 2))
    for k, cell in enumerate(cells):
        for p, lev in enumerate(cell):
            phi[k, p, lev] = 1.0
    pi = np.full((3, 2), 0.5)
    return MixtureSpec(
        psi=np.full(c, 0.25),
        gamma=np.ones((c, 3), dtype=np.int8),
        phi=phi,
        pi=pi,
        levels=(2, 2, 2),
    )


def matched_phi_witness(levels: tuple[int, ...] = (2, 2)) -> MixtureSpec:
    """One cluster selecting everything with phi equal to the marginals.

    The selection product is positive yet every dependence gap is exactly
    zero -- the converse of the independence results fails.
    """
    p_count = len(levels)
    m_max = max(levels)
    phi = np.zeros((1, p_count, m_max))
    for j, m in enumerate(levels):
        phi[0, j, :m] = np.linspace(1, m, m) / np.linspace(1, m, m).sum()
    return MixtureSpec(
        psi=np.array([1.0]),
        gamma=np.ones((1, p_count), dtype=np.int8),
        phi=phi,
        pi=phi[0].copy(),
        levels=levels,
    )


# ---------------------------------------------------------------------------
# exhaustive model posterior
# ---------------------------------------------------------------------------

def exhaustive_model_posterior(
    table: ContingencyTable,
    prior_variance_scale: float = 1.0,
    max_nodes: int = 5,
) -> dict[str, object]:
    """Laplace posterior over every graph (uniform model prior).

    Guarded at `max_nodes` covariates (1024 graphs by default); callers
    enumerating a larger space must raise the guard explicitly.  Graphs
    whose fit fails are dropped with a warning.

    Returns {"graphs": [Graph..], "log_marginal": array, "probability":
    array, "best": Graph}.
    """
    p = len(table.levels)
    if p > max_nodes:
        raise ConfigError(
            f"{p} covariates exceed the enumeration guard ({max_nodes} nodes)"
        )
    all_edges = list(itertools.combinations(range(p), 2))
    graphs: list[loglinear.Graph] = []
    logml: list[float] = []
    for bits in range(1 << len(all_edges)):
        edges = tuple(e for k, e in enumerate(all_edges) if bits >> k & 1)
        graph = loglinear.Graph(p, edges)
        try:
            result = loglinear.fit(
                loglinear.LogLinearModel(graph=graph, levels=table.levels),
                table,
                prior_variance_scale=prior_variance_scale,
            )
        except NumericalError as exc:
            warnings.warn(f"dropping graph {graph.key()}: {exc}", stacklevel=2)
            continue
        graphs.append(graph)
        logml.append(result.log_marginal)
    if not graphs:
        raise NumericalError("every graph failed to fit")
    logml_arr = np.array(logml)
    shifted = logml_arr - logml_arr.max()
    prob = np.exp(shifted)
    prob /= prob.sum()
    return {
        "graphs": graphs,
        "log_marginal": logml_arr,
        "probability": prob,
        "best": graphs[int(np.argmax(prob))],
    }


# ---------------------------------------------------------------------------
# randomized theorem trials (used by the CLI and the acceptance suite)
# ---------------------------------------------------------------------------

def pairwise_trials(n_trials: int, seed: int) -> dict[str, float]:
    """Random specs with disjoint selection for one pair; reports the worst
    dependence gap and the worst pivotal-identity residual."""
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    worst_residual = 0.0
    for _ in range(n_trials):
        p_count = int(rng.integers(2, 5))
        pair = tuple(rng.choice(p_count, size=2, replace=False))
        spec = random_spec(
            rng, p_count=p_count, n_clusters=int(rng.integers(2, 6)),
            disjoint_pair=pair,
        )
        assert selection_overlap(spec, *pair) == 0
        worst_gap = max(worst_gap, dependence_gap(spec, *pair))
        worst_residual = max(
            worst_residual,
            pivotal_identity_residual(spec, pair[0]),
            pivotal_identity_residual(spec, pair[1]),
        )
    return {"max_gap": worst_gap, "max_residual": worst_residual}


def set_trials(n_trials: int, seed: int, corollary: bool = False) -> dict[str, float]:
    """Random specs where one covariate is isolated (or never selected, for
    the corollary variant); reports the worst set-independence gap."""
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    for _ in range(n_trials):
        p_count = int(rng.integers(3, 5))
        target = int(rng.integers(p_count))
        kwargs = {"never_selected": target} if corollary else {"isolated": target}
        spec = random_spec(
            rng,
            p_count=p_count,
            levels=tuple(int(m) for m in rng.integers(2, 3, size=p_count)),
            n_clusters=int(rng.integers(2, 6)),
            **kwargs,
        )
        worst_gap = max(worst_gap, set_independence_gap(spec, target))
    return {"max_gap": worst_gap}
