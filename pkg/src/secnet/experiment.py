"""Factorial experiment harness over parameters and network topologies.

A ``Design`` crosses extinction rate, colonisation rate, edge budget and
topology, with several replicate networks per cell.  ``run_factorial``
evaluates every (cell, replicate) with the exact chain when the patch count
allows it and crude simulation otherwise, escalating to a rare-event
estimator whenever the crude run observes fewer events than a cutoff.
Replicate networks are seeded from (master seed, edge budget, replicate)
only, so topology comparisons at matching edge budgets are paired draws,
and every estimator stream is a pure function of the design and indices:
results are byte-identical however the work is scheduled.

``variance_decomposition`` performs the classical balanced ANOVA sum-of-
squares split (main effects and interactions up to a chosen order, shares
of total) on logit persistence or occupancy; ``scenario_presets`` returns
ten ready-made single-topology designs over two network sizes, and
``scenario_compare`` renders topology orderings with coarse relation
symbols.
"""

from __future__ import annotations

import csv
import itertools
import math
import multiprocessing
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import exact
from .dynamics import Estimate, Params, all_occupied, estimate_crude
from .netgen import TopologySpec, density_to_n_edges, leading_adjacency_eigenvalue
from .rareevent import default_twist_schedule, ips_persistence, is_extinction

__all__ = [
    "ComparisonRow",
    "Design",
    "ResultRow",
    "TopologyFactor",
    "VarianceTable",
    "preset",
    "preset_names",
    "run_factorial",
    "scenario_compare",
    "scenario_presets",
    "variance_decomposition",
    "write_comparison_csv",
    "write_results_csv",
    "write_variance_csv",
]

LOGIT_CLAMP = 1e-6
RELATION_BINS = ((0.02, "~"), (0.10, "≳"), (0.50, ">"))  # else >>
RELATION_WIDE = "≫"


@dataclass(frozen=True)
class TopologyFactor:
    """One level of the topology factor; edge budget is supplied per cell."""

    label: str
    kind: str
    power: float | None = None
    n_communities: int | None = None
    intra_inter_ratio: float | None = None

    def spec(self, n: int, n_edges: int) -> TopologySpec:
        return TopologySpec(
            kind=self.kind, n=n, n_edges=n_edges, power=self.power,
            n_communities=self.n_communities,
            intra_inter_ratio=self.intra_inter_ratio, label=self.label,
        )

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class Design:
    """A factorial experiment over (e, c, edge budget, topology).

    Rate levels come either from the full grid ``e_values x c_values`` or
    from an explicit list of ``(e, c)`` pairs (for designs where the two
    move together).  Edge budgets come from ``densities`` (converted by
    round-half-up) or explicit ``n_edges_values``.  The initial state is
    the fully occupied landscape.
    """

    name: str
    n: int
    topologies: tuple[TopologyFactor, ...]
    n_gen: int
    e_values: tuple[float, ...] = ()
    c_values: tuple[float, ...] = ()
    ec_pairs: tuple[tuple[float, float], ...] = ()
    densities: tuple[float, ...] = ()
    n_edges_values: tuple[int, ...] = ()
    n_network_replicates: int = 10
    n_sim_reps: int = 10_000
    estimator: str = "auto"  # auto | exact | crude
    exact_cap: int = exact.DENSE_CAP_DEFAULT
    escalate_below_events: int = 10
    master_seed: int = 0
    initial: str = "all_occupied"

    def __post_init__(self) -> None:
        object.__setattr__(self, "topologies", tuple(self.topologies))
        object.__setattr__(self, "e_values", tuple(self.e_values))
        object.__setattr__(self, "c_values", tuple(self.c_values))
        object.__setattr__(self, "ec_pairs",
                           tuple((float(e), float(c)) for e, c in self.ec_pairs))
        object.__setattr__(self, "densities", tuple(self.densities))
        object.__setattr__(self, "n_edges_values", tuple(self.n_edges_values))
        if bool(self.ec_pairs) == bool(self.e_values):
            raise ValueError("give either e_values x c_values or ec_pairs")
        if self.e_values and not self.c_values:
            raise ValueError("e_values needs c_values")
        if bool(self.densities) == bool(self.n_edges_values):
            raise ValueError("give either densities or n_edges_values")
        if not self.topologies:
            raise ValueError("at least one topology level is required")
        if self.estimator not in ("auto", "exact", "crude"):
            raise ValueError("estimator must be auto, exact or crude")
        if self.initial != "all_occupied":
            raise ValueError("only the all_occupied initial state is supported")
        if self.n_network_replicates < 1 or self.n_sim_reps < 1 or self.n_gen < 0:
            raise ValueError("replicate counts and horizon must be positive")

    @property
    def rate_pairs(self) -> tuple[tuple[float, float], ...]:
        if self.ec_pairs:
            return self.ec_pairs
        return tuple((e, c) for e in self.e_values for c in self.c_values)

    @property
    def edge_budgets(self) -> tuple[int, ...]:
        if self.n_edges_values:
            return self.n_edges_values
        return tuple(density_to_n_edges(d, self.n) for d in self.densities)

    def cells(self) -> list["Cell"]:
        out = []
        idx = 0
        for e, c in self.rate_pairs:
            for n_edges in self.edge_budgets:
                for topo in self.topologies:
                    out.append(Cell(idx, e, c, n_edges, topo))
                    idx += 1
        return out

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "topologies":
                v = [t.to_dict() for t in v]
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            d[f.name] = v
        return d

    @staticmethod
    def from_dict(d: dict) -> "Design":
        d = dict(d)
        d["topologies"] = tuple(TopologyFactor(**t) for t in d["topologies"])
        d["ec_pairs"] = tuple(tuple(p) for p in d.get("ec_pairs", ()))
        return Design(**d)


@dataclass(frozen=True)
class Cell:
    index: int
    e: float
    c: float
    n_edges: int
    topology: TopologyFactor


@dataclass(frozen=True)
class ResultRow:
    """One (cell, replicate network) outcome."""

    design: str
    cell_index: int
    replicate: int
    e: float
    c: float
    n_edges: int
    density: float
    topology: str
    graph_fingerprint: str
    lambda1: float
    persistence: float
    persistence_se: float
    persistence_method: str
    occupancy: float
    occupancy_se: float
    cond_occupancy: float
    n_survivors: int
    n_extinct: int
    runtime_s: float
    error: str | None = None


def _network_seed(design: Design, n_edges: int, replicate: int) -> np.random.SeedSequence:
    # Topology is deliberately absent: replicate r at a given edge budget is
    # a paired draw across topology levels.
    return np.random.SeedSequence(design.master_seed, spawn_key=(1, n_edges, replicate))


def _estimator_seed(design: Design, cell_index: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(design.master_seed, spawn_key=(2, cell_index, replicate))


def _evaluate(design: Design, cell: Cell, replicate: int) -> ResultRow:
    t0 = time.perf_counter()
    base = dict(
        design=design.name, cell_index=cell.index, replicate=replicate,
        e=cell.e, c=cell.c, n_edges=cell.n_edges,
        density=cell.n_edges / (design.n * (design.n - 1) // 2),
        topology=cell.topology.label,
    )
    try:
        rng = np.random.default_rng(_network_seed(design, cell.n_edges, replicate))
        graph = cell.topology.spec(design.n, cell.n_edges).generate(rng)
        lam1 = leading_adjacency_eigenvalue(graph)
        params = Params(e=cell.e, c=cell.c)
        z0 = all_occupied(design.n)
        use_exact = design.estimator == "exact" or (
            design.estimator == "auto" and design.n <= design.exact_cap
        )
        if use_exact:
            tm = exact.build_transition(graph, params, cap=design.exact_cap)
            table = exact.finite_horizon(tm, z0, design.n_gen)
            row = ResultRow(
                **base, graph_fingerprint=graph.fingerprint(), lambda1=lam1,
                persistence=float(table.p_persist[-1]), persistence_se=0.0,
                persistence_method="exact",
                occupancy=float(table.mean_occ[-1]), occupancy_se=0.0,
                cond_occupancy=float(table.cond_mean_occ[-1]),
                n_survivors=-1, n_extinct=-1,
                runtime_s=time.perf_counter() - t0,
            )
            return row
        seed = _estimator_seed(design, cell.index, replicate)
        report = estimate_crude(graph, params, z0, design.n_gen,
                                design.n_sim_reps, seed)
        pers = report.persistence
        survivors = pers.diagnostics["n_survivors"]
        extinct = pers.diagnostics["n_extinct"]
        cutoff = design.escalate_below_events
        sub_seeds = seed.spawn(2)
        if survivors < cutoff and 0.0 < cell.e < 1.0:
            n_particles = max(64, design.n_sim_reps // 20)
            pers = ips_persistence(graph, params, z0, design.n_gen,
                                   n_particles, sub_seeds[0])
        elif extinct < cutoff and 0.0 < cell.e < 1.0:
            schedule = default_twist_schedule(cell.e, design.n_gen)
            ext = is_extinction(graph, params, z0, design.n_gen, schedule,
                                design.n_sim_reps, sub_seeds[1])
            pers = Estimate(1.0 - ext.value, ext.se, "is", ext.n_work,
                            ext.diagnostics)
        return ResultRow(
            **base, graph_fingerprint=graph.fingerprint(), lambda1=lam1,
            persistence=pers.value, persistence_se=pers.se,
            persistence_method=pers.method,
            occupancy=report.occupancy.value, occupancy_se=report.occupancy.se,
            cond_occupancy=report.conditional_occupancy.value,
            n_survivors=survivors, n_extinct=extinct,
            runtime_s=time.perf_counter() - t0,
        )
    except Exception as err:  # per-cell failures must not sink the run
        return ResultRow(
            **base, graph_fingerprint="", lambda1=float("nan"),
            persistence=float("nan"), persistence_se=float("nan"),
            persistence_method="failed",
            occupancy=float("nan"), occupancy_se=float("nan"),
            cond_occupancy=float("nan"), n_survivors=-1, n_extinct=-1,
            runtime_s=time.perf_counter() - t0,
            error=f"{type(err).__name__}: {err}",
        )


def _evaluate_task(args) -> ResultRow:
    design, cell, replicate = args
    return _evaluate(design, cell, replicate)


def run_factorial(design: Design, workers: int = 1, progress=None) -> list[ResultRow]:
    """Evaluate every (cell, replicate); rows come back in enumeration order.

    ``workers > 1`` distributes (cell, replicate) tasks over a process
    pool; the output is identical for any worker count.  ``progress`` may
    be a callable taking (done, total).
    """
    tasks = [(design, cell, rep)
             for cell in design.cells()
             for rep in range(design.n_network_replicates)]
    rows: list[ResultRow] = []
    if workers <= 1:
        for i, task in enumerate(tasks):
            rows.append(_evaluate_task(task))
            if progress:
                progress(i + 1, len(tasks))
    else:
        with multiprocessing.get_context().Pool(workers) as pool:
            for i, row in enumerate(pool.imap(_evaluate_task, tasks, chunksize=1)):
                rows.append(row)
                if progress:
                    progress(i + 1, len(tasks))
    return rows


RESULT_COLUMNS = [
    "design", "cell_index", "replicate", "e", "c", "n_edges", "density",
    "topology", "graph_fingerprint", "lambda1", "persistence",
    "persistence_se", "persistence_method", "occupancy", "occupancy_se",
    "cond_occupancy", "n_survivors", "n_extinct", "error",
]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_results_csv(rows: list[ResultRow], path: str | Path,
                      include_runtime: bool = False) -> None:
    """Fixed column order: factors, then estimates, then diagnostics.

    Runtimes are excluded by default so reruns are byte-identical.
    """
    cols = RESULT_COLUMNS + (["runtime_s"] if include_runtime else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(getattr(row, c)) for c in cols])


def read_results_csv(path: str | Path) -> list[ResultRow]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rec.pop("runtime_s", None)
            out.append(ResultRow(
                design=rec["design"], cell_index=int(rec["cell_index"]),
                replicate=int(rec["replicate"]), e=float(rec["e"]),
                c=float(rec["c"]), n_edges=int(rec["n_edges"]),
                density=float(rec["density"]), topology=rec["topology"],
                graph_fingerprint=rec["graph_fingerprint"],
                lambda1=float(rec["lambda1"]),
                persistence=float(rec["persistence"]),
                persistence_se=float(rec["persistence_se"]),
                persistence_method=rec["persistence_method"],
                occupancy=float(rec["occupancy"]),
                occupancy_se=float(rec["occupancy_se"]),
                cond_occupancy=float(rec["cond_occupancy"]),
                n_survivors=int(rec["n_survivors"]),
                n_extinct=int(rec["n_extinct"]),
                runtime_s=0.0,
                error=rec["error"] or None,
            ))
    return out


# ---------------------------------------------------------------------------
# balanced ANOVA sum-of-squares decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarianceTable:
    """Sum-of-squares shares for main effects and interactions.

    ``terms`` holds (name, sum of squares, share of total); the residual is
    the replicate-level remainder.  Shares including the residual sum to
    one.  ``degenerate`` flags a constant response.
    """

    response: str
    terms: tuple[tuple[str, float, float], ...]
    residual_ss: float
    residual_share: float
    ss_total: float
    r_squared: float
    degenerate: bool


def _response_value(row: ResultRow, response: str) -> float:
    if response == "logit_persistence":
        p = min(max(row.persistence, LOGIT_CLAMP), 1.0 - LOGIT_CLAMP)
        return math.log(p / (1.0 - p))
    if response == "occupancy":
        return row.occupancy
    if response == "persistence":
        return row.persistence
    raise ValueError(f"unknown response {response!r}")


def variance_decomposition(
    rows: list[ResultRow],
    response: str = "logit_persistence",
    max_order: int | None = None,
) -> VarianceTable:
    """Balanced factorial ANOVA decomposition of a response.

    Factors are e, c, edge budget and topology (those with at least two
    levels among the rows).  The design must be complete and balanced:
    every factor-level combination present with the same replicate count.
    Rows carrying errors are rejected.
    """
    if not rows:
        raise ValueError("no rows")
    bad = [r for r in rows if r.error]
    if bad:
        raise ValueError(f"{len(bad)} rows carry errors; decomposition needs a clean run")
    factor_of = {
        "e": lambda r: r.e,
        "c": lambda r: r.c,
        "edges": lambda r: r.n_edges,
        "topology": lambda r: r.topology,
    }
    levels = {name: sorted({f(r) for r in rows}) for name, f in factor_of.items()}
    factors = [name for name in factor_of if len(levels[name]) > 1]
    if not factors:
        raise ValueError("no factor varies across the rows")
    combos: dict[tuple, int] = {}
    for r in rows:
        key = tuple(factor_of[f](r) for f in factors)
        combos[key] = combos.get(key, 0) + 1
    n_cells = math.prod(len(levels[f]) for f in factors)
    if len(combos) != n_cells or len(set(combos.values())) != 1:
        raise ValueError(
            f"unbalanced design: {len(combos)} of {n_cells} cells present "
            f"with replicate counts {sorted(set(combos.values()))}"
        )

    y = np.array([_response_value(r, response) for r in rows])
    grand = float(y.mean())
    ss_total = float(((y - grand) ** 2).sum())
    if ss_total <= 0.0:
        return VarianceTable(response, (), 0.0, 0.0, 0.0, float("nan"), True)

    if max_order is None:
        max_order = len(factors)
    row_keys = {
        f: np.array([levels[f].index(factor_of[f](r)) for r in rows])
        for f in factors
    }
    # Per-subset cell means, then inclusion-exclusion for the effect terms.
    means: dict[tuple, dict] = {(): {(): grand}}
    for order in range(1, len(factors) + 1):
        for subset in itertools.combinations(factors, order):
            sums: dict[tuple, list] = {}
            for i in range(len(rows)):
                key = tuple(int(row_keys[f][i]) for f in subset)
                acc = sums.setdefault(key, [0.0, 0])
                acc[0] += y[i]
                acc[1] += 1
            means[subset] = {k: s / cnt for k, (s, cnt) in sums.items()}

    terms = []
    ss_explained = 0.0
    for order in range(1, max_order + 1):
        for subset in itertools.combinations(factors, order):
            ss = 0.0
            for i in range(len(rows)):
                key = {f: int(row_keys[f][i]) for f in subset}
                effect = 0.0
                for r_ord in range(order + 1):
                    for sub in itertools.combinations(subset, r_ord):
                        sign = (-1) ** (order - r_ord)
                        effect += sign * means[sub][tuple(key[f] for f in sub)]
                ss += effect * effect
            ss = float(ss)
            ss_explained += ss
            terms.append((":".join(subset), ss, ss / ss_total))
    residual = max(0.0, ss_total - ss_explained)
    return VarianceTable(
        response=response,
        terms=tuple(terms),
        residual_ss=residual,
        residual_share=residual / ss_total,
        ss_total=ss_total,
        r_squared=ss_explained / ss_total,
        degenerate=False,
    )


def write_variance_csv(table: VarianceTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "sum_sq", "share"])
        for name, ss, share in table.terms:
            w.writerow([name, repr(ss), repr(share)])
        w.writerow(["residual", repr(table.residual_ss), repr(table.residual_share)])
        w.writerow(["total", repr(table.ss_total), repr(1.0 if not table.degenerate else 0.0)])


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _five_topologies(n_communities: int) -> tuple[TopologyFactor, ...]:
    return (
        TopologyFactor("ER", "ER"),
        TopologyFactor("COM", "COM", n_communities=n_communities,
                       intra_inter_ratio=100.0),
        TopologyFactor("LAT", "LAT"),
        TopologyFactor("PA1", "PA", power=1.0),
        TopologyFactor("PA3", "PA", power=3.0),
    )


def preset_grid_n10(master_seed: int = 10) -> Design:
    """Full 3x3x3 grid on ten patches, five topologies, exact chain."""
    return Design(
        name="grid-n10", n=10,
        topologies=_five_topologies(n_communities=2),
        e_values=(0.05, 0.10, 0.15), c_values=(0.01, 0.05, 0.10),
        densities=(0.30, 0.50, 0.70),
        n_gen=100, n_network_replicates=10, estimator="auto",
        master_seed=master_seed,
    )


def preset_grid_n100(master_seed: int = 100) -> Design:
    """Full 3x3x3 grid on a hundred patches, five topologies, simulation."""
    return Design(
        name="grid-n100", n=100,
        topologies=_five_topologies(n_communities=5),
        e_values=(0.10, 0.20, 0.25), c_values=(0.001, 0.005, 0.010),
        densities=(0.05, 0.10, 0.30),
        n_gen=100, n_network_replicates=10, n_sim_reps=10_000,
        estimator="auto", master_seed=master_seed,
    )


def preset_contrast_n100(master_seed: int = 300) -> Design:
    """Single harsh cell where only hub-dominated networks persist."""
    return Design(
        name="contrast-n100", n=100,
        topologies=_five_topologies(n_communities=5),
        ec_pairs=((0.25, 0.01),), densities=(0.30,),
        n_gen=100, n_network_replicates=20, n_sim_reps=10_000,
        estimator="auto", master_seed=master_seed,
    )


def scenario_presets(master_seed: int = 500) -> list[Design]:
    """Ten single-topology designs over two network sizes.

    Each crosses e in {0.1, 0.5, 0.8} with c tied as c = e / ratio for a
    ratio of 1 or 5, over a 30-generation horizon; small networks have 50
    nodes and 263 edges, large ones 500 nodes and 2682 edges, and the
    community networks use ten communities with a 10:1 weight ratio.  The
    hub-dominated designs use strongly concentrated attachment (power 3):
    with even attachment the large networks lose the hub that carries
    persistence through harsh extinction regimes.
    """
    er = TopologyFactor("ER", "ER")
    pa = TopologyFactor("PA", "PA", power=3.0)
    com = TopologyFactor("COM", "COM", n_communities=10, intra_inter_ratio=10.0)
    sizes = {50: (263, (er, pa)), 500: (2682, (er, pa, com))}
    out = []
    for n, (n_edges, topos) in sizes.items():
        for topo in topos:
            for ratio in (1, 5):
                out.append(Design(
                    name=f"{topo.label.lower()}{n}-r{ratio}",
                    n=n, topologies=(topo,),
                    ec_pairs=tuple((e, e / ratio) for e in (0.1, 0.5, 0.8)),
                    n_edges_values=(n_edges,),
                    n_gen=30, n_network_replicates=10, n_sim_reps=10_000,
                    estimator="auto", master_seed=master_seed,
                ))
    return out


def preset_names() -> list[str]:
    return ["grid-n10", "grid-n100", "contrast-n100"] + \
        [d.name for d in scenario_presets()]


def preset(name: str, master_seed: int | None = None) -> Design:
    builders = {
        "grid-n10": preset_grid_n10,
        "grid-n100": preset_grid_n100,
        "contrast-n100": preset_contrast_n100,
    }
    if name in builders:
        return builders[name]() if master_seed is None else builders[name](master_seed)
    for d in scenario_presets() if master_seed is None else scenario_presets(master_seed):
        if d.name == name:
            return d
    raise KeyError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")


# ---------------------------------------------------------------------------
# topology comparison summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    """Topology means for one (e, e/c) cell, ordered large to small."""

    e: float
    ec_ratio: float
    response: str
    ordering: tuple[tuple[str, float], ...]
    symbols: tuple[str, ...]
    text: str


def _relation(larger: float, smaller: float) -> str:
    if larger <= 0.0:
        return RELATION_BINS[0][1]
    rel = (larger - smaller) / larger
    for cutoff, symbol in RELATION_BINS:
        if rel < cutoff:
            return symbol
    return RELATION_WIDE


def scenario_compare(
    rows: list[ResultRow],
    responses: tuple[str, ...] = ("persistence", "occupancy"),
) -> list[ComparisonRow]:
    """Order topologies within each (e, e/c) cell and attach relation symbols.

    Relative differences are taken against the larger value: under 2% reads
    as equivalent, then increasing, strong and dominant bins at 10% and
    50%.
    """
    out = []
    keys = sorted({(r.e, round(r.e / r.c, 9)) for r in rows if r.c > 0})
    for response in responses:
        for e, ratio in keys:
            cell = [r for r in rows if r.e == e and r.c > 0
                    and round(r.e / r.c, 9) == ratio]
            by_topo: dict[str, list[float]] = {}
            for r in cell:
                by_topo.setdefault(r.topology, []).append(
                    _response_value(r, response))
            vals = {t: float(np.mean(v)) for t, v in by_topo.items()}
            ordering = tuple(sorted(vals.items(), key=lambda kv: -kv[1]))
            symbols = tuple(
                _relation(ordering[i][1], ordering[i + 1][1])
                for i in range(len(ordering) - 1)
            )
            parts = [f"{ordering[0][0]}={ordering[0][1]:.3g}"]
            for sym, (topo, val) in zip(symbols, ordering[1:]):
                parts.append(f"{sym} {topo}={val:.3g}")
            out.append(ComparisonRow(e, ratio, response, ordering, symbols,
                                     " ".join(parts)))
    return out


def write_comparison_csv(comparisons: list[ComparisonRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["response", "e", "ec_ratio", "ordering"])
        for c in comparisons:
            w.writerow([c.response, repr(c.e), repr(c.ec_ratio), c.text])
