"""Synthetic categorical data from mixtures of graphical log-linear models.

Each subject independently draws a mixture component, then a cell of that
component's table distribution.  The cell distribution of a graphical
model factorizes exactly over the connected components of its graph, so
sampling works per component and the full lattice is never materialized --
which is what makes the 100-covariate preset possible at all.

Randomness comes from a counter-based Philox stream keyed by the spec
seed: subject i consumes the P+1 uniforms at rows i of a fixed layout
(one for the mixture draw, one per graph component slot), so the result
is byte-identical for a given seed no matter how the work is chunked.

The named presets mirror the five simulation designs used throughout the
mixing studies: 10/10/10/20/100 covariates with the interaction structures
listed per preset, a dominant first component and two one-edge
perturbations of it.  Interaction coefficient magnitudes are free knobs
here (main effects default 0.3, interactions 0.7, alternating signs on
main-effect columns).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import CategoricalDataset, default_names
from .errors import ConfigError, NumericalError
from .loglinear import (
    Graph,
    LogLinearModel,
    design_matrix,
    graph_components,
    hierarchical_terms,
    n_parameters,
    term_width,
)

LINPRED_BOUND = 700.0


@dataclass(frozen=True)
class Component:
    graph: Graph
    beta: np.ndarray
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64))
        if self.weight < 0:
            raise ConfigError("component weight must be non-negative")


@dataclass(frozen=True)
class GeneratorSpec:
    components: tuple[Component, ...]
    n: int
    levels: tuple[int, ...]
    seed: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be positive")
        levels = tuple(int(m) for m in self.levels)
        object.__setattr__(self, "levels", levels)
        if not self.components:
            raise ConfigError("need at least one mixture component")
        w = np.array([c.weight for c in self.components])
        if abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError(f"mixture weights sum to {w.sum()!r}, not 1")
        for i, comp in enumerate(self.components):
            need = n_parameters(comp.graph, levels)
            if comp.beta.shape != (need,):
                raise ConfigError(
                    f"component {i}: beta has length {comp.beta.shape[0]}, "
                    f"model needs {need}"
                )
            if not np.all(np.isfinite(comp.beta)):
                raise ConfigError(f"component {i}: beta must be finite")

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])


def _beta_slices(
    graph: Graph, beta: np.ndarray, levels: tuple[int, ...]
) -> dict[tuple[int, ...], np.ndarray]:
    """Coefficient block per model term, in the canonical column layout."""
    out = {}
    pos = 0
    for term in hierarchical_terms(graph):
        width = term_width(term, levels)
        out[term] = beta[pos:pos + width]
        pos += width
    if pos != beta.shape[0]:
        raise ConfigError(f"beta has length {beta.shape[0]}, model needs {pos}")
    return out


def component_distributions(
    graph: Graph, beta: np.ndarray, levels: tuple[int, ...]
) -> list[tuple[tuple[int, ...], np.ndarray]]:
    """Exact cell distribution per connected component of the graph.

    The joint over all covariates is the outer product of these blocks:
    no model term crosses a component, so the normalizing constant
    factorizes.  Each block uses the canonical cell order over its own
    covariates (last one fastest).
    """
    levels = tuple(int(m) for m in levels)
    beta = np.asarray(beta, dtype=np.float64)
    if not np.all(np.isfinite(beta)):
        raise ConfigError("beta must be finite")
    slices = _beta_slices(graph, beta, levels)
    out = []
    for nodes in graph_components(graph):
        local = {v: j for j, v in enumerate(nodes)}
        local_levels = tuple(levels[v] for v in nodes)
        local_terms = tuple(
            tuple(local[v] for v in term)
            for term in sorted(slices, key=lambda t: (len(t), t))
            if term and set(term) <= set(nodes)
        )
        local_terms = ((),) + local_terms
        local_beta = np.concatenate(
            [np.zeros(1)]
            + [
                slices[term]
                for term in sorted(slices, key=lambda t: (len(t), t))
                if term and set(term) <= set(nodes)
            ]
        )
        x = design_matrix(local_terms, local_levels)
        eta = x @ local_beta
        if np.abs(eta).max() > LINPRED_BOUND:
            raise NumericalError(
                f"linear predictor exceeds +/-{LINPRED_BOUND}; "
                "coefficients are implausibly large"
            )
        eta = eta - eta.max()
        p = np.exp(eta)
        out.append((nodes, p / p.sum()))
    return out


def cell_probabilities(
    graph: Graph, beta: np.ndarray, levels: tuple[int, ...]
) -> np.ndarray:
    """Normalized cell distribution proportional to exp(design @ beta).

    Materializes the full lattice, so it is subject to the dense-table
    guard; the generator itself samples per graph component instead.
    """
    levels = tuple(int(m) for m in levels)
    blocks = component_distributions(graph, beta, levels)
    full = np.ones(1)
    covered: list[int] = []
    for nodes, probs in blocks:
        full = np.multiply.outer(full, probs).ravel()
        covered.extend(nodes)
    # undo the component grouping: permute axes back to covariate order
    shape = tuple(levels[v] for v in covered)
    order = np.argsort(np.array(covered))
    full = full.reshape(shape).transpose(order).ravel()
    return full


def generate(spec: GeneratorSpec) -> CategoricalDataset:
    """Draw the dataset described by the spec (deterministic given the seed)."""
    p_count = len(spec.levels)
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    u = rng.random(spec.n * (p_count + 1)).reshape(spec.n, p_count + 1)

    w_cum = np.cumsum(spec.weights)
    w_cum[-1] = 1.0
    comp_idx = np.searchsorted(w_cum, u[:, 0], side="right")
    comp_idx = np.minimum(comp_idx, len(spec.components) - 1)

    codes = np.empty((spec.n, p_count), dtype=np.int64)
    for k, comp in enumerate(spec.components):
        rows = np.flatnonzero(comp_idx == k)
        if rows.size == 0:
            continue
        blocks = component_distributions(comp.graph, comp.beta, spec.levels)
        for j, (nodes, probs) in enumerate(blocks):
            cum = np.cumsum(probs)
            cum[-1] = 1.0
            cells = np.searchsorted(cum, u[rows, 1 + j], side="right")
            cells = np.minimum(cells, probs.shape[0] - 1)
            local_levels = tuple(spec.levels[v] for v in nodes)
            sub = np.stack(np.unravel_index(cells, local_levels), axis=1)
            codes[np.ix_(rows, np.array(nodes))] = sub

    names = spec.names if spec.names is not None else default_names(p_count)
    return CategoricalDataset(codes=codes, levels=spec.levels, names=names)


def mixture_cell_probabilities(spec: GeneratorSpec) -> np.ndarray:
    """The exact cell distribution the generator draws from."""
    p = np.zeros(int(np.prod(spec.levels)))
    for comp in spec.components:
        p += comp.weight * cell_probabilities(comp.graph, comp.beta, spec.levels)
    return p


def build_coefficients(
    graph: Graph,
    levels: tuple[int, ...],
    main: float = 0.3,
    interaction: float = 0.7,
) -> np.ndarray:
    """Deterministic coefficient fill for a preset component.

    Intercept 0; main-effect columns alternate +/-`main` in column order;
    every interaction column gets +`interaction`.
    """
    levels = tuple(int(m) for m in levels)
    pieces = []
    main_col = 0
    for term in hierarchical_terms(graph):
        width = term_width(term, levels)
        if len(term) == 1:
            vals = []
            for _ in range(width):
                vals.append(main if main_col % 2 == 0 else -main)
                main_col += 1
            pieces.append(np.array(vals))
        elif len(term) > 1:
            pieces.append(np.full(width, interaction))
        else:
            pieces.append(np.zeros(1))
    return np.concatenate(pieces)


def _preset(
    name: str,
    p_count: int,
    m: int,
    n: int,
    weights: tuple[float, float, float],
    main_edges: list[tuple[int, int]],
    drop_add: list[tuple[tuple[int, int], tuple[int, int]]],
    seed: int,
    main: float = 0.3,
    interaction: float = 0.7,
) -> GeneratorSpec:
    levels = (m,) * p_count
    graphs = [Graph(p_count, tuple(main_edges))]
    for dropped, added in drop_add:
        edges = [e for e in main_edges if e != dropped] + [added]
        graphs.append(Graph(p_count, tuple(edges)))
    comps = tuple(
        Component(
            graph=g,
            beta=build_coefficients(g, levels, main=main, interaction=interaction),
            weight=w,
        )
        for g, w in zip(graphs, weights)
    )
    return GeneratorSpec(components=comps, n=n, levels=levels, seed=seed)


def builtin_specs() -> dict[str, GeneratorSpec]:
    """Named generator presets.

    sim1..sim3: ten binary covariates, n=10000, weights (0.8, 0.1, 0.1).
    sim4: twenty 3-level covariates, n=5000, six covariates interacting.
    sim5: one hundred binary covariates, n=10000, eight interacting.
    sim1_scaled: six binary covariates (3-clique + 2-clique + 1 isolated),
    n=5000 -- the desk-scale stand-in for sim1.
    demo4: four binary covariates with a 2-edge path, small enough for
    exhaustive model enumeration.

    The secondary components in each preset differ from the dominant graph
    by one removed and one added edge, kept inside the interacting set.
    """
    specs = {
        # 4-cycle A-B-C-D-A plus triangle H,I,J; E,F,G isolated
        "sim1": _preset(
            "sim1", 10, 2, 10_000, (0.8, 0.1, 0.1),
            [(0, 1), (0, 3), (1, 2), (2, 3), (7, 8), (7, 9), (8, 9)],
            [((0, 1), (0, 2)), ((7, 8), (1, 3))],
            seed=11,
        ),
        # 4-cycle A-B-C-D-A plus triangle A,F,G; E,H,I,J isolated
        "sim2": _preset(
            "sim2", 10, 2, 10_000, (0.8, 0.1, 0.1),
            [(0, 1), (0, 3), (1, 2), (2, 3), (0, 5), (0, 6), (5, 6)],
            [((0, 1), (0, 2)), ((0, 3), (3, 5))],
            seed=12,
        ),
        # 4-cycle plus triangles A,F,G and H,I,J; only E isolated
        "sim3": _preset(
            "sim3", 10, 2, 10_000, (0.8, 0.1, 0.1),
            [(0, 1), (0, 3), (1, 2), (2, 3), (0, 5), (0, 6), (5, 6),
             (7, 8), (7, 9), (8, 9)],
            [((0, 1), (0, 2)), ((7, 8), (1, 7))],
            seed=13,
        ),
        # triangle A,B,C plus B-E, D-E, E-F; fourteen isolated covariates
        "sim4": _preset(
            "sim4", 20, 3, 5_000, (0.42, 0.29, 0.29),
            [(0, 1), (0, 2), (1, 2), (1, 4), (3, 4), (4, 5)],
            [((4, 5), (2, 4)), ((1, 2), (2, 3))],
            seed=14,
        ),
        # star A-{B,C,D} plus complete E,F,G,H; ninety-two isolated
        "sim5": _preset(
            "sim5", 100, 2, 10_000, (0.8, 0.1, 0.1),
            [(0, 1), (0, 2), (0, 3), (4, 5), (4, 6), (4, 7), (5, 6), (5, 7),
             (6, 7)],
            [((6, 7), (1, 2)), ((0, 3), (1, 3))],
            seed=15,
        ),
        "sim1_scaled": _preset(
            "sim1_scaled", 6, 2, 5_000, (0.8, 0.1, 0.1),
            [(0, 1), (0, 2), (1, 2), (3, 4)],
            [((0, 1), (0, 3)), ((0, 2), (2, 4))],
            seed=16,
            interaction=1.0,
        ),
        "demo4": _preset(
            "demo4", 4, 2, 5_000, (0.8, 0.1, 0.1),
            [(0, 1), (1, 2)],
            [((0, 1), (0, 2)), ((1, 2), (0, 2))],
            seed=17,
            interaction=1.0,
        ),
    }
    return specs


def spec_from_json(path: str | Path) -> GeneratorSpec:
    """Load a generator spec from a JSON document.

    Schema: {"n": int, "levels": [int..], "seed": int,
             "components": [{"edges": [[a,b]..], "weight": float,
                             "beta": [float..]                  # explicit
                             | "main": float, "interaction": float}]}
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such spec file: {path}")
    doc = json.loads(path.read_text())
    try:
        levels = tuple(int(m) for m in doc["levels"])
        comps = []
        for c in doc["components"]:
            graph = Graph(len(levels), tuple((int(a), int(b)) for a, b in c["edges"]))
            if "beta" in c:
                beta = np.asarray(c["beta"], dtype=np.float64)
            else:
                beta = build_coefficients(
                    graph, levels,
                    main=float(c.get("main", 0.3)),
                    interaction=float(c.get("interaction", 0.7)),
                )
            comps.append(Component(graph=graph, beta=beta, weight=float(c["weight"])))
        return GeneratorSpec(
            components=tuple(comps),
            n=int(doc["n"]),
            levels=levels,
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed generator spec ({exc})") from None


def with_seed(spec: GeneratorSpec, seed: int) -> GeneratorSpec:
    return replace(spec, seed=seed)
