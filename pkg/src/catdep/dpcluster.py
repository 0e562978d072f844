"""Truncated Dirichlet-process mixture sampler with per-cluster variable selection.

Model (per subject i, covariate p, cluster c up to the truncation level C):

    x_ip | z_i=c  ~  Categorical( phi_sharp[c,p] )
    phi_sharp[c,p](x) = phi[c,p](x)^gamma[c,p] * pi[p](x)^(1-gamma[c,p])
    phi[c,p] ~ Dirichlet(lam, ..., lam)
    z_i ~ Categorical(psi),  psi_c = V_c * prod_{l<c} (1 - V_l)
    V_c ~ Beta(1, alpha) for c < C, V_C = 1,  alpha ~ Gamma(a_alpha, b_alpha)
    gamma[c,p] ~ Bernoulli(rho_p)
    rho_p ~ (1 - w_p) * delta_0 + w_p * Beta(a_rho, b_rho),  w_p ~ Bernoulli(0.5)

pi[p] is a fixed vector of reference level frequencies, by default the
empirical frequencies of the data being clustered.  gamma switches a
covariate between cluster-specific level probabilities and the reference
frequencies, and rho_p measures how important the covariate is to the
partition overall; the atom at zero lets unimportant covariates switch
off crisply.

One Gibbs sweep updates, in order: allocations z, stick fractions V, the
(gamma, phi) pair, the (w, rho) pair, and the concentration alpha.  All
blocks are exact conditionals:

  * gamma and phi are drawn jointly per (cluster, covariate): gamma from
    its conditional with phi integrated out (prior odds rho/(1-rho) times
    the Dirichlet-multinomial marginal of the cluster's column against the
    reference product), then phi from Dirichlet(lam + counts) where
    selected, from the prior otherwise.  Collapsing phi here matters for
    mixing: a coherent cluster switches a covariate on because its data
    support it, not because the latest prior draw of phi happened to fit.
  * (w, rho) comes from the atom-at-zero mixture conditional given the
    switch total S over all C clusters: any selection forces the Beta
    branch with Beta(a+S, b+C-S); with S = 0 the branch is drawn from the
    marginal-likelihood odds and rho from Beta(a, b+C) when positive.
  * alpha's conditional given the stick fractions is
    Gamma(a_alpha + C - 1, b_alpha - sum_{c<C} log(1 - V_c)).

Allocation weights are computed in log space; the sampler hard-errors only
on NaN.  A chain is one sequential process; run several chains with
distinct seeds for replication.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .data import CategoricalDataset, MarginalFrequencies, marginals
from .errors import ConfigError, NumericalError

_TINY = 1e-300
_VMAX = 1.0 - 1e-16


@dataclass(frozen=True)
class PriorConfig:
    lam: float = 0.5              # symmetric Dirichlet weight per level
    a_rho: float = 1.0            # Beta branch of the selection prior
    b_rho: float = 1.0
    w_prior: float = 0.5          # prior probability of the Beta branch
    a_alpha: float = 2.0          # Gamma(shape, rate) on the concentration
    b_alpha: float = 1.0
    c_max: int = 50               # truncation level

    def __post_init__(self):
        for name in ("lam", "a_rho", "b_rho", "a_alpha", "b_alpha"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.w_prior <= 1:
            raise ConfigError("w_prior must be in (0, 1]")
        if self.c_max < 2:
            raise ConfigError("c_max must be at least 2")


@dataclass
class ClusterState:
    """Mutable sampler state; arrays sized by (c_max, P, max level count)."""

    z: np.ndarray          # (n,) allocations in [0, c_max)
    sticks: np.ndarray     # (c_max,) stick fractions, last one fixed at 1
    phi: np.ndarray        # (c_max, P, m_max) cluster level probabilities
    gamma: np.ndarray      # (c_max, P) selection switches in {0, 1}
    rho: np.ndarray        # (P,) selection probabilities
    w: np.ndarray          # (P,) atom indicators; rho == 0 exactly when w == 0
    alpha: float
    levels: tuple[int, ...]

    @property
    def c_max(self) -> int:
        return self.sticks.shape[0]

    def weights(self) -> np.ndarray:
        """Allocation weights psi implied by the stick fractions."""
        v = self.sticks
        tail = np.concatenate([[1.0], np.cumprod(1.0 - v[:-1])])
        return v * tail

    def log_weights(self) -> np.ndarray:
        v = np.clip(self.sticks, _TINY, _VMAX)
        out = np.log(v)
        out[1:] += np.cumsum(np.log1p(-v[:-1]))
        out[-1] = np.log1p(-v[:-1]).sum()  # last stick takes the remainder
        return out

    def occupied(self) -> np.ndarray:
        return np.flatnonzero(np.bincount(self.z, minlength=self.c_max) > 0)

    def phi_sharp(self, ref: np.ndarray) -> np.ndarray:
        """Effective level probabilities: phi where selected, else `ref`."""
        g = self.gamma[:, :, None]
        return g * self.phi + (1 - g) * ref[None, :, :]


def validate_state(state: ClusterState) -> None:
    """Raise unless the state satisfies its structural invariants."""
    psi = state.weights()
    if not np.all((psi > 0) & (psi < 1)):
        raise AssertionError("allocation weights outside (0, 1)")
    if np.any(np.cumsum(psi[:-1]) >= 1.0):
        raise AssertionError("partial weight sums reach 1")
    for p, m in enumerate(state.levels):
        tot = state.phi[:, p, :m].sum(axis=1)
        if np.abs(tot - 1.0).max() > 1e-12:
            raise AssertionError(f"phi rows for covariate {p} do not sum to 1")
        if np.any(state.phi[:, p, m:] != 0.0):
            raise AssertionError("phi mass on padded levels")
    if not np.all((state.gamma == 0) | (state.gamma == 1)):
        raise AssertionError("gamma not binary")
    if not np.all((state.rho == 0) == (state.w == 0)):
        raise AssertionError("rho/w atom coupling violated")
    if not 0 <= state.z.min() and state.z.max() < state.c_max:
        raise AssertionError("allocation out of range")
    if not state.alpha > 0:
        raise AssertionError("alpha not positive")


def _dirichlet_rows(shapes: np.ndarray, levels: tuple[int, ...], rng) -> np.ndarray:
    """Independent Dirichlet draws for every (cluster, covariate) row.

    `shapes` is (C, P, m_max); padded level slots are ignored and zeroed.
    """
    c, p, m_max = shapes.shape
    safe = np.where(shapes > 0, shapes, 1.0)
    g = rng.gamma(shape=safe)
    for j, m in enumerate(levels):
        g[:, j, m:] = 0.0
    g = np.maximum(g, _TINY * (shapes > 0))
    return g / g.sum(axis=2, keepdims=True)


def _level_mask(levels: tuple[int, ...], m_max: int) -> np.ndarray:
    mask = np.zeros((len(levels), m_max), dtype=bool)
    for p, m in enumerate(levels):
        mask[p, :m] = True
    return mask


def draw_prior_state(
    levels: tuple[int, ...],
    n: int,
    priors: PriorConfig,
    rng: np.random.Generator,
    init_groups: int | None = None,
    all_switchable: bool = False,
) -> ClusterState:
    """A full draw from the prior; allocations optionally forced to
    `init_groups` uniform random groups instead of the stick prior.

    `all_switchable` starts every atom indicator in the Beta branch (the
    prior conditional on w = 1).  A covariate whose indicator starts at
    zero cannot switch on until the atom resurrects it, which needlessly
    slows early exploration, so chain initialization uses this.
    """
    p_count = len(levels)
    m_max = max(levels)
    c = priors.c_max

    alpha = rng.gamma(priors.a_alpha, 1.0 / priors.b_alpha)
    sticks = np.empty(c)
    sticks[:-1] = np.clip(rng.beta(1.0, alpha, size=c - 1), _TINY, _VMAX)
    sticks[-1] = 1.0

    shapes = np.zeros((c, p_count, m_max))
    mask = _level_mask(levels, m_max)
    shapes[:, mask] = priors.lam
    phi = _dirichlet_rows(shapes, levels, rng)

    if all_switchable:
        w = np.ones(p_count, dtype=np.int8)
    else:
        w = (rng.random(p_count) < priors.w_prior).astype(np.int8)
    rho = np.where(w == 1, rng.beta(priors.a_rho, priors.b_rho, size=p_count), 0.0)
    rho = np.where(w == 1, np.clip(rho, _TINY, _VMAX), 0.0)
    gamma = (rng.random((c, p_count)) < rho[None, :]).astype(np.int8)

    state = ClusterState(
        z=np.zeros(n, dtype=np.int64),
        sticks=sticks,
        phi=phi,
        gamma=gamma,
        rho=rho,
        w=w,
        alpha=float(alpha),
        levels=tuple(levels),
    )
    if init_groups is not None:
        state.z = rng.integers(0, min(init_groups, c), size=n)
    else:
        psi = state.weights()
        state.z = rng.choice(c, size=n, p=psi / psi.sum())
    return state


def sample_dataset(
    state: ClusterState,
    ref: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw a code matrix from the likelihood at the current state.

    `ref` is the (P, m_max) padded reference frequency table standing in
    for the fixed marginals.  Used by the sampler-validation harness.
    """
    sharp = state.phi_sharp(ref)
    n = state.z.shape[0]
    codes = np.empty((n, len(state.levels)), dtype=np.int64)
    for p, m in enumerate(state.levels):
        probs = sharp[state.z, p, :m]
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(n) * cdf[:, -1]
        codes[:, p] = (cdf < u[:, None]).sum(axis=1)
    return codes


def likelihood_contribution(
    state: ClusterState,
    data: CategoricalDataset,
    margins: MarginalFrequencies,
    i: int,
    c: int,
) -> float:
    """Probability of subject i's profile under cluster c's switched model."""
    if not 0 <= c < state.c_max:
        raise ConfigError(f"cluster {c} outside the truncation level")
    out = 1.0
    for p in range(data.p_count):
        x = int(data.codes[i, p])
        if state.gamma[c, p]:
            out *= float(state.phi[c, p, x])
        else:
            out *= float(margins.freqs[p][x])
    return out


def _crosstab(
    z: np.ndarray, codes: np.ndarray, c: int, levels: tuple[int, ...], m_max: int
) -> np.ndarray:
    """(C, P, m_max) counts of levels per cluster."""
    out = np.zeros((c, len(levels), m_max), dtype=np.int64)
    base = z.astype(np.int64) * m_max
    for p in range(len(levels)):
        flat = np.bincount(base + codes[:, p], minlength=c * m_max)
        out[:, p, :] = flat.reshape(c, m_max)
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gibbs_sweep(
    state: ClusterState,
    data: CategoricalDataset,
    priors: PriorConfig,
    rng: np.random.Generator,
    margins: MarginalFrequencies | None = None,
    fix_gamma: str | None = None,
    fix_alpha: float | None = None,
) -> ClusterState:
    """One full sweep over all blocks; mutates and returns `state`.

    `margins` supplies the reference frequencies (defaults to the empirical
    marginals of `data`).  `fix_gamma` in {"zero", "one"} freezes the
    switches and skips the (w, rho) block; `fix_alpha` pins the
    concentration.  Both hooks exist for sampler validation.
    """
    if margins is None:
        margins = marginals(data)
    codes = data.codes
    n, p_count = codes.shape
    c = state.c_max
    m_max = state.phi.shape[2]
    ref = margins.padded()
    with np.errstate(divide="ignore"):
        log_ref = np.where(ref > 0, np.log(np.maximum(ref, _TINY)), -np.inf)
        log_phi = np.log(np.maximum(state.phi, _TINY))

    # allocations: P(z_i = c) prop. to psi_c * prod_p phi_sharp[c,p](x_ip)
    g = state.gamma[:, :, None]
    log_sharp = g * log_phi + (1 - g) * log_ref[None, :, :]
    logits = np.broadcast_to(state.log_weights()[:, None], (c, n)).copy()
    for p in range(p_count):
        logits += log_sharp[:, p, :][:, codes[:, p].astype(np.int64)]
    peak = logits.max(axis=0)
    if np.isnan(peak).any():
        raise NumericalError("NaN in allocation weights")
    probs = np.exp(logits - peak[None, :])
    cdf = np.cumsum(probs, axis=0)
    u = rng.random(n) * cdf[-1]
    state.z = (cdf < u[None, :]).sum(axis=0).astype(np.int64)

    # stick fractions: V_c ~ Beta(1 + n_c, alpha + n_{>c}), last fixed at 1
    n_c = np.bincount(state.z, minlength=c).astype(np.float64)
    tail = n - np.cumsum(n_c)
    v = rng.beta(1.0 + n_c[:-1], state.alpha + tail[:-1])
    state.sticks[:-1] = np.clip(v, _TINY, _VMAX)
    state.sticks[-1] = 1.0

    # switches and level probabilities, drawn jointly per (cluster, covariate):
    # gamma from its conditional with phi integrated out, then phi given gamma
    counts = _crosstab(state.z, codes, c, state.levels, m_max)
    mask = _level_mask(state.levels, m_max)
    if fix_gamma is None:
        lam = priors.lam
        m_sizes = np.array(state.levels, dtype=np.float64)
        n_cp = counts.sum(axis=2).astype(np.float64)       # cluster size, per (c, p)
        lml_sel = (
            np.where(mask[None, :, :], gammaln(lam + counts) - gammaln(lam), 0.0)
            .sum(axis=2)
            - gammaln(lam * m_sizes[None, :] + n_cp)
            + gammaln(lam * m_sizes)[None, :]
        )
        log_ref_safe = np.where(mask, np.maximum(log_ref, -1e30), 0.0)
        lml_ref = np.einsum("cpm,pm->cp", counts.astype(np.float64), log_ref_safe)
        with np.errstate(divide="ignore"):
            prior_logit = np.log(np.maximum(state.rho, _TINY)) - np.log1p(-state.rho)
        odds = _stable_sigmoid(prior_logit[None, :] + lml_sel - lml_ref)
        odds[:, state.rho == 0.0] = 0.0
        state.gamma = (rng.random((c, p_count)) < odds).astype(np.int8)
    elif fix_gamma == "zero":
        state.gamma[:] = 0
    elif fix_gamma == "one":
        state.gamma[:] = 1
    else:
        raise ConfigError(f"fix_gamma must be None, 'zero' or 'one', not {fix_gamma!r}")

    shapes = np.where(mask[None, :, :], priors.lam, 0.0)
    shapes = shapes + counts * state.gamma[:, :, None]
    state.phi = _dirichlet_rows(shapes, state.levels, rng)

    # (w, rho): exact atom-at-zero mixture conditional given the switch totals
    if fix_gamma is None:
        s = state.gamma.sum(axis=0).astype(np.float64)
        a, b = priors.a_rho, priors.b_rho
        if priors.w_prior >= 1.0:
            p_on_given_s0 = 1.0
        else:
            base_logit = math.log(priors.w_prior / (1.0 - priors.w_prior))
            # Bayes factor for an all-zero switch column:  B(a, b+C) / B(a, b)
            log_bf = (gammaln(b + c) - gammaln(b)) - (gammaln(a + b + c) - gammaln(a + b))
            p_on_given_s0 = float(_stable_sigmoid(np.array([base_logit + log_bf]))[0])
        state.w = np.where(
            s > 0, 1, rng.random(p_count) < p_on_given_s0
        ).astype(np.int8)
        draws = rng.beta(a + s, b + c - s)
        state.rho = np.where(state.w == 1, np.clip(draws, _TINY, _VMAX), 0.0)

    # concentration: Gamma(a + C - 1, b - sum log(1 - V_c)) over the free sticks
    if fix_alpha is None:
        rate = priors.b_alpha - np.log1p(-state.sticks[:-1]).sum()
        state.alpha = float(rng.gamma(priors.a_alpha + c - 1, 1.0 / rate))
    else:
        state.alpha = float(fix_alpha)

    return state


# ---------------------------------------------------------------------------
# chains and traces
# ---------------------------------------------------------------------------

@dataclass
class ClusterTrace:
    """Retained sweeps of a single chain.

    Per retained iteration: allocations, selection probabilities, the
    concentration, and for each then-occupied cluster its id, size, switch
    row and effective (switched) level probabilities.
    """

    z: np.ndarray                        # (T, n) int16
    rho: np.ndarray                      # (T, P)
    alpha: np.ndarray                    # (T,)
    cluster_ids: list[np.ndarray]        # (K_t,) per iteration
    sizes: list[np.ndarray]              # (K_t,)
    gamma: list[np.ndarray]              # (K_t, P) int8
    psi: list[np.ndarray]                # (K_t,)
    phi_sharp: list[np.ndarray]          # (K_t, P, m_max)
    levels: tuple[int, ...]
    names: tuple[str, ...]
    ref_freqs: tuple[np.ndarray, ...]    # the fixed reference marginals
    seed: int
    burnin: int
    thin: int

    def __post_init__(self):
        n = self.z.shape[1]
        for t, sz in enumerate(self.sizes):
            if int(sz.sum()) != n:
                raise ConfigError(f"iteration {t}: cluster sizes sum to {sz.sum()}, not {n}")

    @property
    def n_retained(self) -> int:
        return self.z.shape[0]

    @property
    def n_subjects(self) -> int:
        return self.z.shape[1]

    @property
    def p_count(self) -> int:
        return self.rho.shape[1]

    def reference_marginals(self) -> MarginalFrequencies:
        return MarginalFrequencies(freqs=self.ref_freqs, levels=self.levels)


def run_chain(
    data: CategoricalDataset,
    priors: PriorConfig,
    burnin: int,
    iters: int,
    thin: int = 1,
    seed: int = 0,
    margins: MarginalFrequencies | None = None,
    fix_gamma: str | None = None,
    fix_alpha: float | None = None,
    init_groups: int = 10,
) -> ClusterTrace:
    """Run one chain: `burnin` discarded sweeps, then `iters` sweeps of
    which every `thin`-th is retained.  Deterministic given `seed`.

    Chains start from a random allocation into `init_groups` groups with
    all other parameters drawn from their priors.
    """
    if iters < 1:
        raise ConfigError("iters must be at least 1")
    if thin < 1 or burnin < 0:
        raise ConfigError("thin must be >= 1 and burnin >= 0")
    if margins is None:
        margins = marginals(data)
    rng = np.random.default_rng(seed)
    state = draw_prior_state(
        data.levels, data.n, priors, rng,
        init_groups=init_groups, all_switchable=True,
    )
    if fix_gamma == "zero":
        state.gamma[:] = 0
    elif fix_gamma == "one":
        state.gamma[:] = 1
    if fix_alpha is not None:
        state.alpha = float(fix_alpha)

    ref = margins.padded()
    rec_z, rec_rho, rec_alpha = [], [], []
    ids_l, sizes_l, gam_l, psi_l, sharp_l = [], [], [], [], []
    for sweep in range(burnin + iters):
        gibbs_sweep(state, data, priors, rng, margins=margins,
                    fix_gamma=fix_gamma, fix_alpha=fix_alpha)
        kept = sweep >= burnin and (sweep - burnin) % thin == thin - 1
        if not kept:
            continue
        n_c = np.bincount(state.z, minlength=state.c_max)
        occ = np.flatnonzero(n_c > 0)
        rec_z.append(state.z.astype(np.int16))
        rec_rho.append(state.rho.copy())
        rec_alpha.append(state.alpha)
        ids_l.append(occ.astype(np.int16))
        sizes_l.append(n_c[occ].astype(np.int64))
        gam_l.append(state.gamma[occ].copy())
        psi_l.append(state.weights()[occ])
        sharp_l.append(state.phi_sharp(ref)[occ].astype(np.float64))

    return ClusterTrace(
        z=np.array(rec_z, dtype=np.int16),
        rho=np.array(rec_rho),
        alpha=np.array(rec_alpha),
        cluster_ids=ids_l,
        sizes=sizes_l,
        gamma=gam_l,
        psi=psi_l,
        phi_sharp=sharp_l,
        levels=data.levels,
        names=data.column_names(),
        ref_freqs=margins.freqs,
        seed=seed,
        burnin=burnin,
        thin=thin,
    )


def posterior_rho_summary(
    trace: ClusterTrace, lo: float = 0.025, hi: float = 0.975
) -> dict[str, np.ndarray]:
    """Per-covariate posterior median and credible interval of rho."""
    if trace.n_retained < 1:
        raise ConfigError("empty trace")
    return {
        "median": np.median(trace.rho, axis=0),
        "lo": np.quantile(trace.rho, lo, axis=0),
        "hi": np.quantile(trace.rho, hi, axis=0),
    }


# ---------------------------------------------------------------------------
# trace persistence: JSON metadata + three CSV files
# ---------------------------------------------------------------------------

def save_trace(trace: ClusterTrace, base: str | Path) -> list[Path]:
    """Write `<base>.meta.json`, `<base>.iters.csv`, `<base>.clusters.csv`
    and `<base>.alloc.csv`; returns the paths written."""
    base = Path(base)
    meta_path = base.with_name(base.name + ".meta.json")
    iters_path = base.with_name(base.name + ".iters.csv")
    clusters_path = base.with_name(base.name + ".clusters.csv")
    alloc_path = base.with_name(base.name + ".alloc.csv")

    meta = {
        "n": trace.n_subjects,
        "p": trace.p_count,
        "levels": list(trace.levels),
        "names": list(trace.names),
        "ref_freqs": [[repr(float(v)) for v in f] for f in trace.ref_freqs],
        "seed": trace.seed,
        "burnin": trace.burnin,
        "thin": trace.thin,
        "retained": trace.n_retained,
        "format": {
            "iters.csv": "one row per retained iteration: iter, alpha, rho per covariate",
            "clusters.csv": "one row per (iteration, occupied cluster): iter, cluster,"
                            " size, psi, gamma per covariate, phi per (covariate, level)",
            "alloc.csv": "one row per retained iteration: iter, space-joined allocations",
        },
    }
    meta_path.write_text(json.dumps(meta, indent=1))

    names = trace.names
    with iters_path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "alpha"] + [f"rho_{s}" for s in names])
        for t in range(trace.n_retained):
            wr.writerow([t, repr(float(trace.alpha[t]))]
                        + [repr(float(v)) for v in trace.rho[t]])

    phi_cols = [f"phi_{s}_{m}" for p, s in enumerate(names)
                for m in range(trace.levels[p])]
    with clusters_path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "cluster", "size", "psi"]
                    + [f"gamma_{s}" for s in names] + phi_cols)
        for t in range(trace.n_retained):
            for k, cid in enumerate(trace.cluster_ids[t]):
                phis = [
                    repr(float(trace.phi_sharp[t][k, p, m]))
                    for p in range(trace.p_count)
                    for m in range(trace.levels[p])
                ]
                wr.writerow(
                    [t, int(cid), int(trace.sizes[t][k]),
                     repr(float(trace.psi[t][k]))]
                    + [int(v) for v in trace.gamma[t][k]] + phis
                )

    with alloc_path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "z"])
        for t in range(trace.n_retained):
            wr.writerow([t, " ".join(str(int(v)) for v in trace.z[t])])

    return [meta_path, iters_path, clusters_path, alloc_path]


def load_trace(base: str | Path) -> ClusterTrace:
    base = Path(base)
    meta_path = base.with_name(base.name + ".meta.json")
    if not meta_path.exists():
        raise ConfigError(f"no trace metadata at {meta_path}")
    meta = json.loads(meta_path.read_text())
    levels = tuple(int(m) for m in meta["levels"])
    names = tuple(meta["names"])
    p_count = len(levels)

    with base.with_name(base.name + ".iters.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    alpha = np.array([float(r[1]) for r in rows])
    rho = np.array([[float(v) for v in r[2:]] for r in rows])

    t_count = len(rows)
    ids_l = [[] for _ in range(t_count)]
    sizes_l = [[] for _ in range(t_count)]
    gam_l = [[] for _ in range(t_count)]
    psi_l = [[] for _ in range(t_count)]
    sharp_l = [[] for _ in range(t_count)]
    m_max = max(levels)
    with base.with_name(base.name + ".clusters.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    for r in rows:
        t = int(r[0])
        ids_l[t].append(int(r[1]))
        sizes_l[t].append(int(r[2]))
        psi_l[t].append(float(r[3]))
        gam_l[t].append([int(v) for v in r[4:4 + p_count]])
        flat = [float(v) for v in r[4 + p_count:]]
        sharp = np.zeros((p_count, m_max))
        pos = 0
        for p, m in enumerate(levels):
            sharp[p, :m] = flat[pos:pos + m]
            pos += m
        sharp_l[t].append(sharp)

    with base.with_name(base.name + ".alloc.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    z = np.array([[int(v) for v in r[1].split()] for r in rows], dtype=np.int16)

    return ClusterTrace(
        z=z,
        rho=rho,
        alpha=alpha,
        cluster_ids=[np.array(v, dtype=np.int16) for v in ids_l],
        sizes=[np.array(v, dtype=np.int64) for v in sizes_l],
        gamma=[np.array(v, dtype=np.int8) for v in gam_l],
        psi=[np.array(v) for v in psi_l],
        phi_sharp=[np.array(v) for v in sharp_l],
        levels=levels,
        names=names,
        ref_freqs=tuple(
            np.array([float(v) for v in f]) for f in meta["ref_freqs"]
        ),
        seed=int(meta["seed"]),
        burnin=int(meta["burnin"]),
        thin=int(meta["thin"]),
    )
