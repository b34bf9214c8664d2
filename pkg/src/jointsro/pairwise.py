"""Reference-pair SRO estimation: coarse grid search, golden-section refinement."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SyncError
from .likelihood import PPM, PairObjective, SroVector
from .optimizer import estimate_joint
from .spectral import SpectrogramSet

log = logging.getLogger(__name__)

__all__ = [
    "GridResult",
    "PairwiseResult",
    "grid_search_init",
    "grid_init",
    "golden_section",
    "estimate_pairwise",
]

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class GridResult:
    epsilon: float
    grid: np.ndarray     # candidate SROs (dimensionless)
    values: np.ndarray   # objective at each candidate

    @property
    def step(self):
        return float(self.grid[1] - self.grid[0]) if len(self.grid) > 1 else 0.0


def _range(range_ppm):
    if np.ndim(range_ppm) == 0:
        return -float(range_ppm), float(range_ppm)
    lo, hi = range_ppm
    return float(lo), float(hi)


def grid_search_init(spec_ref, spec_other, range_ppm=100.0, num_grids=100,
                     config=None, *, objective=None):
    """Evaluate the two-channel objective on an inclusive uniform grid.

    Args:
        spec_ref, spec_other: ``(T, F/2+1)`` coefficients of the reference
            and the other channel.
        range_ppm: half-width of a symmetric range, or ``(lo, hi)`` in ppm.
        num_grids: number of grid points (endpoints included).
        config: ``StftConfig`` of the spectrograms.
        objective: a prebuilt ``PairObjective`` to reuse.

    Returns:
        ``GridResult``; on ties the lowest grid index wins.
    """
    if num_grids < 2:
        raise InvalidInputError("num_grids must be >= 2")
    lo, hi = _range(range_ppm)
    objective = objective or PairObjective(spec_ref, spec_other, config)
    grid = np.linspace(lo, hi, num_grids) * PPM
    values = objective(grid)
    best = int(np.argmax(values))
    return GridResult(float(grid[best]), grid, values)


def golden_section(objective, lo, hi, tol=1e-9, max_iter=200):
    """Maximize a unimodal scalar function on ``[lo, hi]``.

    The bracket shrinks by the golden ratio per evaluation until it is
    narrower than ``tol``; the midpoint of the final bracket is returned.
    When ``max_iter`` runs out first, the best point seen is returned with a
    warning.
    """
    if not lo < hi:
        raise InvalidInputError(f"need lo < hi, got [{lo}, {hi}]")
    a, b = float(lo), float(hi)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = objective(c), objective(d)
    best_x, best_f = (c, fc) if fc >= fd else (d, fd)
    for _ in range(max_iter):
        if b - a <= tol:
            return 0.5 * (a + b)
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = objective(c)
            if fc > best_f:
                best_x, best_f = c, fc
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = objective(d)
            if fd > best_f:
                best_x, best_f = d, fd
    warnings.warn(f"golden_section: no convergence in {max_iter} iterations",
                  RuntimeWarning, stacklevel=2)
    return best_x


def grid_init(spec: SpectrogramSet, range_ppm=100.0, num_grids=100):
    """Pairwise grid search for every non-reference channel.

    Returns ``(SroVector, [GridResult, ...])``.
    """
    eps = np.zeros(spec.num_channels)
    grids = []
    for m in range(1, spec.num_channels):
        g = grid_search_init(spec.coeffs[0], spec.coeffs[m], range_ppm,
                             num_grids, spec.config)
        eps[m] = g.epsilon
        grids.append(g)
    return SroVector(eps), grids


@dataclass
class PairwiseResult:
    sro: SroVector
    init: SroVector
    details: list = field(default_factory=list)


def estimate_pairwise(spec: SpectrogramSet, method="gss", range_ppm=100.0,
                      num_grids=100, tol_ppm=0.001, outer_iters=100,
                      inner_iters=1, mm_tol_ppm=0.001):
    """Estimate each ``eps_m`` from channels ``(0, m)`` alone.

    Every pair starts from a grid search; ``method="gss"`` then runs golden
    section on ``[best - step, best + step]``, ``method="mm"`` runs the
    joint MM estimator restricted to the pair.

    Returns:
        ``PairwiseResult`` with the assembled ``SroVector``, the grid
        initialization, and one detail record per channel.
    """
    if method not in ("gss", "mm"):
        raise InvalidInputError(f"unknown pairwise method {method!r}")
    M = spec.num_channels
    if M < 2:
        raise InvalidInputError("need at least two channels")
    eps = np.zeros(M)
    init = np.zeros(M)
    details = []
    for m in range(1, M):
        try:
            obj = PairObjective(spec.coeffs[0], spec.coeffs[m], spec.config)
            g = grid_search_init(None, None, range_ppm, num_grids, objective=obj)
            init[m] = g.epsilon
            if method == "gss":
                step = g.step
                eps[m] = golden_section(obj, g.epsilon - step, g.epsilon + step,
                                        tol=tol_ppm * PPM)
                details.append({"channel": m, "grid": g})
            else:
                res = estimate_joint(spec.select([0, m]), [0.0, g.epsilon],
                                     outer_iters, inner_iters, mm_tol_ppm)
                eps[m] = res.sro.epsilons[1]
                details.append({"channel": m, "grid": g, "joint": res})
        except SyncError as exc:
            exc.args = (f"channel {m}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        log.debug("pair (0, %d): init %.3f ppm -> %.4f ppm", m, init[m] / PPM, eps[m] / PPM)
    return PairwiseResult(SroVector(eps), SroVector(init), details)
