"""Stochastic patch-occupancy kernel: extinction then colonisation.

One generation maps an occupancy state through two phases: every occupied
patch goes extinct independently with probability ``e``, then every patch
left empty is colonised with probability ``1 - (1 - c) ** o`` where ``o``
counts its occupied neighbours.  By default the colonisers are the patches
that survived the extinction phase of the same generation, which matches the
exact transition matrix built as extinction followed by colonisation; the
variant where colonisation pressure comes from the pre-extinction state is
available through ``Params.colonisation_source``.

States are integer bitmasks (bit ``i`` set means patch ``i`` is occupied);
state ``0`` is absorbing.  ``step`` and ``simulate`` operate on single
states, ``estimate_crude`` runs a vectorised batch of replicates with
scheduler-independent RNG streams derived from a master seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netgen import Graph

__all__ = [
    "Estimate",
    "EstimateReport",
    "Params",
    "Trajectory",
    "array_to_state",
    "estimate_crude",
    "simulate",
    "state_to_array",
    "step",
    "write_report_csv",
    "write_trajectory_csv",
]

SOURCES = ("post-extinction", "pre-extinction")

# Replicates are simulated in fixed-size blocks, one RNG stream per block,
# spawned from the master seed.  The block size is a protocol constant:
# changing it changes which sample you draw (never its law), so it is not a
# tuning knob and results never depend on how blocks are scheduled.
BLOCK_REPS = 1024


@dataclass(frozen=True)
class Params:
    """Kernel parameters.

    ``e``: per-generation extinction probability of an occupied patch.
    ``c``: per-contact colonisation probability.
    ``colonisation_source``: whether colonisation pressure is computed from
    the survivors of the current generation's extinction phase (default) or
    from the pre-extinction state.
    """

    e: float
    c: float
    colonisation_source: str = "post-extinction"

    def __post_init__(self) -> None:
        if not 0.0 <= self.e <= 1.0:
            raise ValueError(f"e={self.e} outside [0, 1]")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError(f"c={self.c} outside [0, 1]")
        if self.colonisation_source not in SOURCES:
            raise ValueError(f"colonisation_source must be one of {SOURCES}")

    @property
    def post_source(self) -> bool:
        return self.colonisation_source == "post-extinction"


def state_to_array(state: int, n: int) -> np.ndarray:
    """Bitmask -> boolean occupancy vector of length n."""
    if state < 0 or state >> n:
        raise ValueError(f"state {state} out of range for n={n}")
    return np.array([(state >> i) & 1 for i in range(n)], dtype=bool)


def array_to_state(occ: np.ndarray) -> int:
    """Boolean occupancy vector -> bitmask."""
    state = 0
    for i in np.flatnonzero(occ):
        state |= 1 << int(i)
    return state


def all_occupied(n: int) -> int:
    return (1 << n) - 1


def _colonisation_table(c: float, max_degree: int) -> np.ndarray:
    """P(colonised | o occupied neighbours) indexed by o."""
    return 1.0 - (1.0 - c) ** np.arange(max_degree + 1)


def _step_block(
    occ: np.ndarray,
    adjacency: np.ndarray,
    e: float,
    pcol: np.ndarray,
    post_source: bool,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance a (reps, n) block one generation.

    Returns ``(survivors, next_occ)``.  Uniforms are drawn for every patch
    regardless of occupancy so the stream consumption per generation is
    fixed.
    """
    u_ext = rng.random(occ.shape)
    survivors = occ & (u_ext >= e)
    source = survivors if post_source else occ
    o = (source @ adjacency).astype(np.intp)
    u_col = rng.random(occ.shape)
    colonised = ~survivors & (u_col < pcol[o])
    return survivors, survivors | colonised


def step(graph: Graph, params: Params, state: int, rng: np.random.Generator) -> int:
    """One generation from a bitmask state; returns the next bitmask."""
    occ = state_to_array(state, graph.n)[None, :]
    pcol = _colonisation_table(params.c, int(graph.degrees.max()) if graph.n_edges else 0)
    _, nxt = _step_block(occ, graph.adjacency_matrix, params.e, pcol,
                         params.post_source, rng)
    return array_to_state(nxt[0])


@dataclass(frozen=True)
class Trajectory:
    """A single realisation: states[t] is the bitmask after t generations."""

    n: int
    states: tuple[int, ...]

    @property
    def occupied_counts(self) -> np.ndarray:
        return np.array([s.bit_count() for s in self.states], dtype=np.intp)

    @property
    def extinction_time(self) -> int | None:
        """First t with an empty landscape, or None if it never empties."""
        for t, s in enumerate(self.states):
            if s == 0:
                return t
        return None


def simulate(
    graph: Graph,
    params: Params,
    z0: int,
    n_gen: int,
    rng: np.random.Generator,
) -> Trajectory:
    """Simulate ``n_gen`` generations from ``z0``.

    The empty state is absorbing; once reached, the remaining entries are
    filled without consuming further randomness.
    """
    if n_gen < 0:
        raise ValueError("n_gen must be >= 0")
    occ = state_to_array(z0, graph.n)[None, :]
    pcol = _colonisation_table(params.c, int(graph.degrees.max()) if graph.n_edges else 0)
    adjacency = graph.adjacency_matrix
    states = [z0]
    state = z0
    for t in range(n_gen):
        if state == 0:
            states.extend([0] * (n_gen - t))
            break
        _, occ = _step_block(occ, adjacency, params.e, pcol, params.post_source, rng)
        state = array_to_state(occ[0])
        states.append(state)
    return Trajectory(graph.n, tuple(states))


def write_trajectory_csv(trajectory: Trajectory, path: str | Path) -> None:
    """Columns: generation, occupied_count, state_hex."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "occupied_count", "state_hex"])
        for t, s in enumerate(trajectory.states):
            w.writerow([t, s.bit_count(), format(s, "x")])


@dataclass(frozen=True)
class Estimate:
    """Point estimate with a standard error and a method tag."""

    value: float
    se: float
    method: str
    n_work: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def clamped(self) -> float:
        """Display helper; estimators always report the raw value."""
        return min(1.0, max(0.0, self.value))


@dataclass(frozen=True)
class EstimateReport:
    """Crude Monte Carlo summary at the horizon plus per-generation series.

    ``occupancy`` averages over all replicates (extinct ones count zero);
    ``conditional_occupancy`` averages over surviving replicates only, so
    ``occupancy = conditional_occupancy * persistence`` holds exactly.
    """

    persistence: Estimate
    occupancy: Estimate
    conditional_occupancy: Estimate
    persistence_series: np.ndarray
    occupancy_series: np.ndarray
    conditional_occupancy_series: np.ndarray
    n_gen: int
    n_reps: int


def estimate_crude(
    graph: Graph,
    params: Params,
    z0: int,
    n_gen: int,
    n_reps: int,
    seed,
) -> EstimateReport:
    """Persistence and occupancy by direct simulation of ``n_reps`` replicates.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.  Replicates
    are partitioned into fixed blocks of ``BLOCK_REPS``; block ``b`` uses the
    ``b``-th spawn of the seed, so the result is a pure function of
    ``(inputs, seed)`` no matter how the work is scheduled.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    if n_gen < 0:
        raise ValueError("n_gen must be >= 0")
    n = graph.n
    z0_arr = state_to_array(z0, n)
    adjacency = graph.adjacency_matrix
    pcol = _colonisation_table(params.c, int(graph.degrees.max()) if graph.n_edges else 0)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    n_blocks = -(-n_reps // BLOCK_REPS)
    streams = ss.spawn(n_blocks)

    alive = np.zeros(n_gen + 1, dtype=np.int64)
    occ_sum = np.zeros(n_gen + 1, dtype=np.float64)
    final_sq_sum = 0.0  # sum of squared final occupancy counts

    for b in range(n_blocks):
        reps = min(BLOCK_REPS, n_reps - b * BLOCK_REPS)
        rng = np.random.default_rng(streams[b])
        occ = np.broadcast_to(z0_arr, (reps, n)).copy()
        counts = occ.sum(axis=1)
        alive[0] += int((counts > 0).sum())
        occ_sum[0] += float(counts.sum())
        t_stop = n_gen
        for t in range(1, n_gen + 1):
            _, occ = _step_block(occ, adjacency, params.e, pcol, params.post_source, rng)
            counts = occ.sum(axis=1)
            alive[t] += int((counts > 0).sum())
            occ_sum[t] += float(counts.sum())
            if not counts.any():
                t_stop = t
                break
        if t_stop == n_gen:
            final_sq_sum += float((counts.astype(np.float64) ** 2).sum())
        # Blocks that died out contribute zeros to every later generation
        # and zero squared occupancy at the horizon.

    n_alive = int(alive[n_gen])
    p_hat = n_alive / n_reps
    se_p = math.sqrt(p_hat * (1.0 - p_hat) / n_reps)
    occ_mean = occ_sum[n_gen] / n_reps
    if n_reps > 1:
        var_occ = max(0.0, (final_sq_sum - n_reps * occ_mean**2) / (n_reps - 1))
        se_occ = math.sqrt(var_occ / n_reps)
    else:
        se_occ = 0.0
    if n_alive > 0:
        cond_mean = occ_sum[n_gen] / n_alive
        if n_alive > 1:
            # Extinct replicates contribute zero to the squared sum, so the
            # survivor-only moments come from the same accumulators.
            var_cond = max(0.0, (final_sq_sum - n_alive * cond_mean**2) / (n_alive - 1))
            se_cond = math.sqrt(var_cond / n_alive)
        else:
            se_cond = 0.0
    else:
        cond_mean, se_cond = 0.0, 0.0

    with np.errstate(invalid="ignore", divide="ignore"):
        cond_series = np.where(alive > 0, occ_sum / np.maximum(alive, 1), 0.0)
    diag = {"n_survivors": n_alive, "n_extinct": n_reps - n_alive}
    return EstimateReport(
        persistence=Estimate(p_hat, se_p, "crude", n_reps, diag),
        occupancy=Estimate(occ_mean, se_occ, "crude", n_reps),
        conditional_occupancy=Estimate(cond_mean, se_cond, "crude", n_alive),
        persistence_series=alive / n_reps,
        occupancy_series=occ_sum / n_reps,
        conditional_occupancy_series=cond_series,
        n_gen=n_gen,
        n_reps=n_reps,
    )


def write_report_csv(report: EstimateReport, path: str | Path) -> None:
    """Per-generation series: t, p_persist, mean_occ, cond_mean_occ."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "p_persist", "mean_occ", "cond_mean_occ"])
        for t in range(report.n_gen + 1):
            w.writerow([
                t,
                repr(float(report.persistence_series[t])),
                repr(float(report.occupancy_series[t])),
                repr(float(report.conditional_occupancy_series[t])),
            ])
