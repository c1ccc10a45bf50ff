"""Exact finite-chain analysis of the extinction-colonisation kernel.

The occupancy process on ``n`` patches is a Markov chain on the ``2**n``
bitmask states, with state 0 absorbing.  This module builds the one-step
matrices

* ``E[z, z']`` -- extinction phase, nonzero only for ``z'`` a subset of
  ``z``, with probability ``e**(|z|-|z'|) * (1-e)**|z'|``;
* ``C[z, z']`` -- colonisation phase, nonzero only for ``z`` a subset of
  ``z'``: each empty patch turns on independently with probability
  ``1 - (1-c)**o`` where ``o`` counts its occupied neighbours in ``z``;
* ``M = E @ C`` -- the full generation,

and provides distribution propagation over a finite horizon, the
quasi-stationary distribution (left Perron eigenvector of the transient
block), mean extinction times, spectral convergence diagnostics, and an
extinction-probability grid over ``(e, c)``.

Dense matrices are limited to ``2**n <= 4096`` states by default.  A
matrix-free propagation mode covers horizons on somewhat larger systems
(up to ``n = 20``) without ever materialising a ``2**n x 2**n`` array; its
cost grows like ``3**n`` per generation, so the last few sizes are slow.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Params, estimate_crude
from .netgen import ConvergenceError, Graph, leading_adjacency_eigenvalue

__all__ = [
    "HorizonTable",
    "QsdResult",
    "ConvergenceReport",
    "HeatmapResult",
    "TransitionMatrices",
    "build_transition",
    "convergence_diagnostics",
    "extinction_heatmap",
    "finite_horizon",
    "finite_horizon_matrix_free",
    "mean_extinction_time",
    "qsd",
    "write_heatmap_csv",
    "write_horizon_csv",
    "write_qsd_csv",
]

DENSE_CAP_DEFAULT = 12
DENSE_CAP_MAX = 14
MATRIX_FREE_CAP = 20
QSD_TOL = 1e-10
QSD_MAX_ITER = 1_000_000


def _check_cap(n: int, cap: int) -> None:
    if not 1 <= cap <= DENSE_CAP_MAX:
        raise ValueError(f"dense state cap must lie in [1, {DENSE_CAP_MAX}]")
    if n > cap:
        raise ValueError(
            f"n={n} exceeds the dense cap of {cap} patches "
            f"({2 ** n} states); raise the cap (max {DENSE_CAP_MAX}) or use "
            "the matrix-free horizon / simulation instead"
        )
    if n > DENSE_CAP_DEFAULT:
        warnings.warn(
            f"building dense {2 ** n} x {2 ** n} matrices "
            f"(~{3 * (2 ** n) ** 2 * 8 / 1e9:.1f} GB for E, C, M)",
            ResourceWarning,
            stacklevel=3,
        )


def _popcounts(n_states: int, n: int) -> np.ndarray:
    idx = np.arange(n_states, dtype=np.int64)
    pc = np.zeros(n_states, dtype=np.int64)
    for i in range(n):
        pc += (idx >> i) & 1
    return pc


def _state_bits(n_states: int, n: int) -> np.ndarray:
    """(n_states, n) matrix of state bits, bit i in column i."""
    idx = np.arange(n_states, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)


@dataclass(frozen=True)
class TransitionMatrices:
    """Dense one-step matrices over all bitmask states, coffin at index 0."""

    n: int
    e: float
    c: float
    E: np.ndarray
    C: np.ndarray
    M: np.ndarray

    @property
    def n_states(self) -> int:
        return 1 << self.n

    @property
    def R(self) -> np.ndarray:
        """Transient block: M restricted to the non-empty states."""
        return self.M[1:, 1:]


def _extinction_matrix(n: int, e: float) -> np.ndarray:
    s = 1 << n
    pc = _popcounts(s, n)
    sub = (np.arange(s)[None, :] & ~np.arange(s)[:, None]) == 0  # z' subset of z
    z_idx, zp_idx = np.nonzero(sub)
    em = np.zeros((s, s))
    em[z_idx, zp_idx] = np.power(e, (pc[z_idx] - pc[zp_idx]).astype(float)) \
        * np.power(1.0 - e, pc[zp_idx].astype(float))
    return em


def _colonisation_probabilities(graph: Graph, c: float) -> np.ndarray:
    """(n_states, n): P(bit i set after colonisation | source state z)."""
    s = 1 << graph.n
    bits = _state_bits(s, graph.n)
    occupied_neighbours = bits @ graph.adjacency_matrix
    q = np.power(1.0 - c, occupied_neighbours)  # P(patch i not colonised)
    return np.where(bits > 0, 1.0, 1.0 - q)


def _colonisation_matrix(graph: Graph, c: float) -> np.ndarray:
    n = graph.n
    s = 1 << n
    p_set = _colonisation_probabilities(graph, c)
    cm = np.empty((s, s))
    for z in range(s):
        row = np.ones(1)
        for i in range(n):
            p = p_set[z, i]
            row = np.concatenate((row * (1.0 - p), row * p))
        cm[z] = row
    return cm


def build_transition(
    graph: Graph,
    params: Params,
    cap: int = DENSE_CAP_DEFAULT,
) -> TransitionMatrices:
    """Build ``E``, ``C`` and ``M = E @ C`` for a graph and parameters.

    Requires the default post-extinction colonisation source: the product
    ``E @ C`` feeds the survivors of the extinction phase into the
    colonisation phase, which is exactly that convention.
    """
    if not params.post_source:
        raise ValueError(
            "exact matrices are defined for the post-extinction colonisation "
            "source; the pre-extinction variant is simulation-only"
        )
    _check_cap(graph.n, cap)
    em = _extinction_matrix(graph.n, params.e)
    cm = _colonisation_matrix(graph, params.c)
    return TransitionMatrices(graph.n, params.e, params.c, em, cm, em @ cm)


# ---------------------------------------------------------------------------
# finite-horizon propagation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HorizonTable:
    """Per-generation summary of the exact state distribution.

    ``tail_conditioned`` optionally holds the distribution over non-empty
    states conditioned on survival for the last generations (keyed by t),
    which the convergence diagnostics compare against the quasi-stationary
    distribution.
    """

    n: int
    t: np.ndarray
    p_extinct: np.ndarray
    p_persist: np.ndarray
    mean_occ: np.ndarray
    cond_mean_occ: np.ndarray
    tail_conditioned: dict = field(default_factory=dict)


def _summaries(v: np.ndarray, pc: np.ndarray) -> tuple[float, float, float]:
    p0 = float(v[0])
    persist = 1.0 - p0
    occ = float(v @ pc)
    cond = occ / persist if persist > 0.0 else 0.0
    return p0, occ, cond


def _assemble_table(n, n_gen, p0s, occs, conds, tail) -> HorizonTable:
    p_ext = np.asarray(p0s)
    occ = np.asarray(occs)
    return HorizonTable(
        n=n,
        t=np.arange(n_gen + 1),
        p_extinct=p_ext,
        p_persist=1.0 - p_ext,
        mean_occ=occ,
        cond_mean_occ=np.asarray(conds),
        tail_conditioned=tail,
    )


def finite_horizon(
    tm: TransitionMatrices,
    z0: int,
    n_gen: int,
    keep_tail: int = 0,
) -> HorizonTable:
    """Propagate the exact distribution ``n_gen`` generations from ``z0``.

    ``keep_tail`` retains the survival-conditioned distribution for that
    many final generations (needed by ``convergence_diagnostics``).
    """
    s = tm.n_states
    if not 0 <= z0 < s:
        raise ValueError(f"z0={z0} out of range")
    if n_gen < 0:
        raise ValueError("n_gen must be >= 0")
    pc = _popcounts(s, tm.n).astype(float)
    v = np.zeros(s)
    v[z0] = 1.0
    p0s, occs, conds = [], [], []
    tail: dict[int, np.ndarray] = {}
    for t in range(n_gen + 1):
        if t > 0:
            v = v @ tm.M
        p0, occ, cond = _summaries(v, pc)
        p0s.append(p0)
        occs.append(occ)
        conds.append(cond)
        if keep_tail and t > n_gen - keep_tail and p0 < 1.0:
            tail[t] = v[1:] / (1.0 - p0)
    return _assemble_table(tm.n, n_gen, p0s, occs, conds, tail)


def _apply_extinction_inplace(v: np.ndarray, n: int, e: float) -> np.ndarray:
    """v <- v @ E using the per-bit factorisation of the extinction phase."""
    for i in range(n):
        a = v.reshape(-1, 2, 1 << i)
        v1 = a[:, 1, :].copy()
        a[:, 0, :] += e * v1
        a[:, 1, :] = (1.0 - e) * v1
    return v


def finite_horizon_matrix_free(
    graph: Graph,
    params: Params,
    z0: int,
    n_gen: int,
    cap: int = MATRIX_FREE_CAP,
) -> HorizonTable:
    """Exact horizon summaries without building any 2**n x 2**n matrix.

    The extinction phase factorises per patch and costs ``n * 2**n`` per
    generation; the colonisation phase is applied row by row and costs on
    the order of ``3**n`` per generation.  Practical up to ``n = 20``
    (minutes per generation at the top end).
    """
    n = graph.n
    if not params.post_source:
        raise ValueError("exact propagation requires the post-extinction source")
    if n > cap or cap > MATRIX_FREE_CAP:
        raise ValueError(f"matrix-free propagation supports n <= {MATRIX_FREE_CAP}")
    s = 1 << n
    if not 0 <= z0 < s:
        raise ValueError(f"z0={z0} out of range")
    pc = _popcounts(s, n).astype(float)
    p_set = _colonisation_probabilities(graph, params.c)
    bitvals = 1 << np.arange(n, dtype=np.int64)
    v = np.zeros(s)
    v[z0] = 1.0
    p0s, occs, conds = [], [], []
    for t in range(n_gen + 1):
        if t > 0:
            v = _apply_extinction_inplace(v, n, params.e)
            w = np.zeros(s)
            for z in np.flatnonzero(v):
                # Occupied patches stay occupied; walk the empty ones,
                # doubling the weight and offset arrays per patch.
                weights = np.array([v[z]])
                offsets = np.array([0], dtype=np.int64)
                empty = [i for i in range(n) if not (z >> i) & 1]
                for i in empty:
                    p = p_set[z, i]
                    weights = np.concatenate((weights * (1.0 - p), weights * p))
                    offsets = np.concatenate((offsets, offsets + bitvals[i]))
                w[z + offsets] += weights
            v = w
        p0, occ, cond = _summaries(v, pc)
        p0s.append(p0)
        occs.append(occ)
        conds.append(cond)
    return _assemble_table(n, n_gen, p0s, occs, conds, {})


# ---------------------------------------------------------------------------
# quasi-stationary distribution and spectral quantities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QsdResult:
    """Left Perron data of the transient block ``R``.

    ``alpha`` is the quasi-stationary distribution over non-empty states
    (index ``z - 1`` holds state ``z``); ``lambda1`` its eigenvalue, which
    equals the second-largest eigenvalue of the full chain.  ``right``
    is the matching right eigenvector (survival capacity per state,
    normalised to unit maximum) and ``lambda2_abs`` the modulus of the
    subdominant eigenvalue of ``R``, found by deflated power iteration.
    """

    n: int
    lambda1: float
    alpha: np.ndarray
    right: np.ndarray
    lambda2_abs: float
    residual: float
    iterations: int


def _power_left(r: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float, int]:
    s = r.shape[0]
    x = np.full(s, 1.0 / s)
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = x @ r
        lam_new = float(y.sum())
        if lam_new <= 0.0:
            raise ValueError("transient block has no mass; e=1 collapses every state")
        y /= lam_new
        if abs(lam_new - lam) < tol and np.max(np.abs(y - x)) < tol:
            return y, lam_new, it
        x, lam = y, lam_new
    raise ConvergenceError(f"QSD power iteration did not converge in {max_iter} steps")


def _power_right(r: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    s = r.shape[0]
    x = np.full(s, 1.0 / math.sqrt(s))
    lam = 0.0
    for _ in range(max_iter):
        y = r @ x
        nrm = float(np.linalg.norm(y))
        if nrm == 0.0:
            return x
        y /= nrm
        if abs(nrm - lam) < tol and np.max(np.abs(y - x)) < tol:
            return y
        x, lam = y, nrm
    raise ConvergenceError(f"right eigenvector iteration did not converge in {max_iter} steps")


def _lambda2_abs(r, alpha, right, lam1, tol, max_iter) -> float:
    """Modulus of the subdominant eigenvalue via single deflation.

    Power iteration on the deflated matrix drifts forever when the
    subdominant eigenvalue is a complex conjugate pair, so instead of the
    raw growth ratio this fits the two-term recurrence
    ``y_{k+2} = a y_{k+1} + b y_k`` satisfied by the iterates and reads the
    modulus off the companion roots of ``z^2 - a z - b``.  A real dominant
    direction makes the fit collapse to the ordinary one-term ratio.
    """
    s = r.shape[0]
    if s == 1:
        return 0.0
    denom = float(alpha @ right)
    deflator = np.outer(right, alpha) * (lam1 / denom)
    bmat = r - deflator
    # A structured start can be exactly orthogonal to the subdominant
    # eigenvector on symmetric graphs; a fixed pseudo-random start is not.
    y0 = np.random.default_rng(0x5EC2).standard_normal(s)
    y0 /= float(np.linalg.norm(y0))
    y1 = y0 @ bmat
    est = 0.0
    stable = 0
    for _ in range(max_iter):
        n1 = float(np.linalg.norm(y1))
        if n1 < 1e-300:
            return 0.0
        y2 = y1 @ bmat
        g00 = float(y0 @ y0)
        g01 = float(y0 @ y1)
        g11 = float(y1 @ y1)
        det = g11 * g00 - g01 * g01
        if det > 1e-12 * g11 * g00:
            # least-squares fit of y2 against (y1, y0)
            r1 = float(y1 @ y2)
            r0 = float(y0 @ y2)
            a = (g00 * r1 - g01 * r0) / det
            b = (g11 * r0 - g01 * r1) / det
            roots = np.roots([1.0, -a, -b])
            est_new = float(np.max(np.abs(roots)))
        else:
            # iterates are collinear: the dominant direction is real
            est_new = n1 / float(np.linalg.norm(y0))
        if abs(est_new - est) < max(tol, 1e-13) * (1.0 + est_new):
            stable += 1
            if stable >= 3:
                return est_new
        else:
            stable = 0
        est = est_new
        y0, y1 = y1 / n1, y2 / n1
    raise ConvergenceError(
        f"subdominant eigenvalue iteration did not converge in {max_iter} steps"
    )


def qsd(
    tm: TransitionMatrices,
    tol: float = QSD_TOL,
    max_iter: int = QSD_MAX_ITER,
) -> QsdResult:
    """Quasi-stationary distribution of the chain by left power iteration.

    Requires ``0 < e < 1`` and ``c > 0`` on a connected graph so that the
    transient block is irreducible and aperiodic and the left Perron vector
    is the unique limit of survival-conditioned distributions.
    """
    if not 0.0 < tm.e < 1.0:
        raise ValueError("the quasi-stationary distribution needs 0 < e < 1")
    if tm.c <= 0.0:
        raise ValueError("the quasi-stationary distribution needs c > 0")
    r = tm.R
    alpha, lam1, iters = _power_left(r, tol, max_iter)
    right = _power_right(r, tol, max_iter)
    right = right / right.max()
    lam2 = _lambda2_abs(r, alpha, right, lam1, tol, max_iter)
    residual = float(np.max(np.abs(alpha @ r - lam1 * alpha)))
    return QsdResult(tm.n, lam1, alpha, right, lam2, residual, iters)


def mean_extinction_time(tm: TransitionMatrices, z0: int) -> float:
    """Expected generations to absorption from ``z0`` (must be non-empty).

    Solves ``(I - R) m = 1`` directly.
    """
    if z0 <= 0 or z0 >= tm.n_states:
        raise ValueError("z0 must be a non-empty state")
    if tm.e <= 0.0:
        raise ValueError("extinction time is infinite for e = 0")
    r = tm.R
    m = np.linalg.solve(np.eye(r.shape[0]) - r, np.ones(r.shape[0]))
    return float(m[z0 - 1])


@dataclass(frozen=True)
class ConvergenceReport:
    """How far the horizon behaviour is from its asymptotic regime.

    ``tail_ratio_mean`` averages successive persistence ratios over the last
    window; asymptotically this equals ``lambda1``.  ``tv_to_qsd`` is the
    total-variation distance between the survival-conditioned distribution
    at the horizon and the quasi-stationary distribution, with the series
    over kept generations in ``tv_series``.  ``two_scale_regime`` flags a
    clean separation between the survival timescale and the mixing
    timescale: ``(lambda2_abs / lambda1) < threshold * lambda1``.
    """

    lambda1: float
    lambda2_abs: float
    tail_ratio_mean: float
    tail_ratio_deviation: float
    tv_to_qsd: float
    tv_series: dict
    two_scale_regime: bool
    threshold: float


def convergence_diagnostics(
    result: QsdResult,
    table: HorizonTable,
    window: int = 10,
    threshold: float = 0.5,
) -> ConvergenceReport:
    """Compare finite-horizon decay against the spectral prediction.

    The horizon must cover at least 50 generations so tail ratios mean
    anything.
    """
    n_gen = int(table.t[-1])
    if n_gen < 50:
        raise ValueError("diagnostics need a horizon of at least 50 generations")
    ratios = []
    for t in range(n_gen - window + 1, n_gen + 1):
        prev = table.p_persist[t - 1]
        if prev > 0.0:
            ratios.append(table.p_persist[t] / prev)
    tail_mean = float(np.mean(ratios)) if ratios else float("nan")
    tv_series = {
        t: 0.5 * float(np.abs(dist - result.alpha).sum())
        for t, dist in sorted(table.tail_conditioned.items())
    }
    tv_last = tv_series[max(tv_series)] if tv_series else float("nan")
    ratio = result.lambda2_abs / result.lambda1
    return ConvergenceReport(
        lambda1=result.lambda1,
        lambda2_abs=result.lambda2_abs,
        tail_ratio_mean=tail_mean,
        tail_ratio_deviation=abs(tail_mean - result.lambda1),
        tv_to_qsd=tv_last,
        tv_series=tv_series,
        two_scale_regime=bool(ratio < threshold * result.lambda1),
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# (e, c) extinction grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeatmapResult:
    """Extinction probability at a fixed horizon over an (e, c) grid.

    ``p_extinct[i, j]`` corresponds to ``(e_grid[i], c_grid[j])``.
    ``contour_c`` gives, per ``e``, the colonisation rate where ``e / c``
    equals the leading adjacency eigenvalue (the mean-field frontier).
    """

    e_grid: np.ndarray
    c_grid: np.ndarray
    p_extinct: np.ndarray
    lambda1: float
    contour_c: np.ndarray
    n_gen: int
    method: str


def extinction_heatmap(
    graph: Graph,
    e_grid,
    c_grid,
    n_gen: int,
    z0: int | None = None,
    cap: int = DENSE_CAP_DEFAULT,
    method: str = "auto",
    n_reps: int = 10_000,
    seed=0,
) -> HeatmapResult:
    """Extinction probability after ``n_gen`` generations over a grid.

    ``method='exact'`` propagates the full distribution, reusing one
    extinction matrix per ``e`` and one colonisation matrix per ``c`` (the
    product matrix is never formed).  ``method='sim'`` estimates each cell
    with ``n_reps`` crude simulations.  ``'auto'`` picks exact when the
    state space fits under ``cap``.
    """
    e_grid = np.asarray(list(e_grid), dtype=float)
    c_grid = np.asarray(list(c_grid), dtype=float)
    n = graph.n
    if z0 is None:
        z0 = (1 << n) - 1
    if method == "auto":
        method = "exact" if n <= cap else "sim"
    lam1 = leading_adjacency_eigenvalue(graph)
    p = np.empty((len(e_grid), len(c_grid)))
    if method == "exact":
        _check_cap(n, cap)
        s = 1 << n
        e_mats = [_extinction_matrix(n, e) for e in e_grid]
        c_mats = [_colonisation_matrix(graph, c) for c in c_grid]
        for i, em in enumerate(e_mats):
            for j, cm in enumerate(c_mats):
                v = np.zeros(s)
                v[z0] = 1.0
                for _ in range(n_gen):
                    v = (v @ em) @ cm
                p[i, j] = v[0]
    elif method == "sim":
        ss = np.random.SeedSequence(seed)
        cells = ss.spawn(len(e_grid) * len(c_grid))
        for i, e in enumerate(e_grid):
            for j, c in enumerate(c_grid):
                rep = estimate_crude(
                    graph, Params(e=float(e), c=float(c)), z0, n_gen,
                    n_reps, cells[i * len(c_grid) + j],
                )
                p[i, j] = 1.0 - rep.persistence.value
    else:
        raise ValueError("method must be 'auto', 'exact' or 'sim'")
    contour = e_grid / lam1 if lam1 > 0 else np.full_like(e_grid, np.nan)
    return HeatmapResult(e_grid, c_grid, p, lam1, contour, n_gen, method)


# ---------------------------------------------------------------------------
# CSV writers
# ---------------------------------------------------------------------------

def write_horizon_csv(table: HorizonTable, path: str | Path) -> None:
    """Columns: t, p_extinct, p_persist, mean_occ, cond_mean_occ."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "p_extinct", "p_persist", "mean_occ", "cond_mean_occ"])
        for t in range(len(table.t)):
            w.writerow([
                int(table.t[t]),
                repr(float(table.p_extinct[t])),
                repr(float(table.p_persist[t])),
                repr(float(table.mean_occ[t])),
                repr(float(table.cond_mean_occ[t])),
            ])


def write_qsd_csv(result: QsdResult, path: str | Path) -> None:
    """Columns: state_hex, alpha (non-empty states in index order)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state_hex", "alpha"])
        for z in range(1, (1 << result.n)):
            w.writerow([format(z, "x"), repr(float(result.alpha[z - 1]))])


def write_heatmap_csv(result: HeatmapResult, path: str | Path,
                      contour_path: str | Path | None = None) -> None:
    """Long-format grid: e, c, p_extinct; optional contour file: e, c_contour."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["e", "c", "p_extinct"])
        for i, e in enumerate(result.e_grid):
            for j, c in enumerate(result.c_grid):
                w.writerow([repr(float(e)), repr(float(c)),
                            repr(float(result.p_extinct[i, j]))])
    if contour_path is not None:
        with open(contour_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["e", "c_contour"])
            for e, c in zip(result.e_grid, result.contour_c):
                w.writerow([repr(float(e)), repr(float(c))])
