"""Penalty-level search and dimension-stabilized cross-validation.

The generalized bisection method (GBM) walks a FIFO queue of penalty
intervals and records, for every support size it meets, the first penalty
level producing it. The basic bisection method (BBM) locates one target
size. Cross-validation refits the unpenalized criterion on each discovered
support and picks the size minimizing L_k + 0.5 k log(n) / n.
"""

from __future__ import annotations

import bisect
import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dictionary import Dictionary, moments_from_features
from .objective import WeightSpec, _c, empirical_loss
from .optimizer import PreparedGram, SolverSettings, SpadesFit, prepare_gram, solve

log = logging.getLogger(__name__)

W0_MARGIN = 1e-12
DEFAULT_FOLDS = 10


class TargetNotFound(RuntimeError):
    """No penalty level yields the requested support size within the width tolerance."""


class RefitWarning(UserWarning):
    pass


class _PathSolver:
    """Scalar-penalty solves with a warm-start cache keyed by penalty level."""

    def __init__(self, moments, gram, settings: Optional[SolverSettings]):
        self.c = np.ascontiguousarray(_c(moments), dtype=float)
        self.pg = prepare_gram(gram)
        self.settings = settings or SolverSettings()
        self.M = self.pg.M
        self.fits: dict[float, SpadesFit] = {}
        self._levels: list[float] = []
        self.calls = 0

    def fit(self, w: float) -> SpadesFit:
        if w in self.fits:
            return self.fits[w]
        warm = None
        # w = 0 is the unpenalized end: a sparse warm start can leave coordinates
        # with exactly-zero Gram coupling stuck at zero, so start cold there
        if self._levels and w > 0.0:
            pos = bisect.bisect_left(self._levels, w)
            near = [self._levels[i] for i in (pos - 1, pos) if 0 <= i < len(self._levels)]
            nearest = min(near, key=lambda v: abs(v - w))
            warm = self.fits[nearest].lambda_hat
        fit = solve(self.c, self.pg, WeightSpec.constant(w, self.M), self.settings, warm)
        self.calls += 1
        if not fit.converged:
            log.debug("solver hit max_sweeps at w=%g", w)
        self.fits[w] = fit
        bisect.insort(self._levels, w)
        return fit

    def count(self, w: float) -> int:
        return self.fit(w).n_nonzero


def n_hat(w: float, moments, gram, settings: Optional[SolverSettings] = None) -> int:
    """Number of nonzero coefficients at scalar penalty ``w``."""
    if w < 0:
        raise ValueError("penalty level must be nonnegative")
    return _PathSolver(moments, gram, settings).count(float(w))


def zero_level(moments) -> float:
    """Smallest scalar penalty certifying lambda = 0, plus a tiny margin."""
    return float(np.max(np.abs(_c(moments)))) + W0_MARGIN


@dataclass
class TuningPath:
    entries: dict[int, float]
    fits: dict[int, SpadesFit] = field(repr=False, default_factory=dict)
    fit_count: int = 0
    converged: bool = True

    @property
    def ks(self) -> list[int]:
        return sorted(self.entries)

    def support(self, k: int) -> np.ndarray:
        return self.fits[k].support

    def rows(self):
        return [(k, self.entries[k]) for k in self.ks]


def gbm_path(
    moments,
    gram,
    settings: Optional[SolverSettings] = None,
    alpha: Optional[float] = None,
    *,
    _solver: Optional[_PathSolver] = None,
) -> TuningPath:
    """Generalized bisection over the penalty level.

    ``alpha`` is the interval width below which a pair is not split further;
    the default is 1e-6 times the zero level w_0.
    """
    ps = _solver or _PathSolver(moments, gram, settings)
    w0 = zero_level(ps.c)
    if alpha is None:
        alpha = 1e-6 * w0
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    entries: dict[int, float] = {}
    fits: dict[int, SpadesFit] = {}

    def record(w):
        fit = ps.fit(w)
        k = fit.n_nonzero
        if k not in entries:
            entries[k] = w
            fits[k] = fit
        return k

    record(w0)
    record(0.0)
    queue = deque([(w0, 0.0)])
    while queue:
        a, b = queue.popleft()
        w = 0.5 * (a + b)
        k = record(w)
        if abs(ps.count(a) - k) > 1 and abs(a - w) > alpha:
            queue.append((a, w))
        if abs(ps.count(b) - k) > 1 and abs(b - w) > alpha:
            queue.append((w, b))
    converged = all(f.converged for f in fits.values())
    return TuningPath(entries=entries, fits=fits, fit_count=ps.calls, converged=converged)


def grid_path(moments, gram, settings: Optional[SolverSettings] = None, points: int = 1000) -> TuningPath:
    """Support sizes met on a uniform grid of ``points`` levels over [0, w_0], warm-started downwards."""
    ps = _PathSolver(moments, gram, settings)
    w0 = zero_level(ps.c)
    entries: dict[int, float] = {}
    fits: dict[int, SpadesFit] = {}
    for w in np.linspace(w0, 0.0, points):
        fit = ps.fit(float(w))
        entries.setdefault(fit.n_nonzero, float(w))
        fits.setdefault(fit.n_nonzero, fit)
    return TuningPath(entries=entries, fits=fits, fit_count=ps.calls)


def bbm_find(
    k_target: int,
    moments,
    gram,
    settings: Optional[SolverSettings] = None,
    alpha: Optional[float] = None,
    *,
    _solver: Optional[_PathSolver] = None,
) -> float:
    """Bisection on [0, w_0] for a level with exactly ``k_target`` nonzeros."""
    ps = _solver or _PathSolver(moments, gram, settings)
    if not 0 <= k_target <= ps.M:
        raise TargetNotFound(f"support size {k_target} impossible with M={ps.M}")
    hi = zero_level(ps.c)
    if alpha is None:
        alpha = 1e-6 * hi
    if ps.count(hi) == k_target:
        return hi
    lo = 0.0
    if ps.count(lo) == k_target:
        return lo
    while hi - lo > alpha:
        w = 0.5 * (lo + hi)
        k = ps.count(w)
        if k == k_target:
            return w
        if k > k_target:
            lo = w
        else:
            hi = w
    raise TargetNotFound(f"no penalty level with {k_target} nonzeros within width {alpha:g}")


def refit_on_support(support, moments, gram):
    """Unpenalized minimizer over the coordinates in ``support``; zeros elsewhere.

    Returns ``(lambda, ridge_used)``. A singular Gram block falls back to a
    ridge with jitter 1e-10 * trace / |S| and emits a :class:`RefitWarning`.
    """
    c = _c(moments)
    G = gram.dense if isinstance(gram, PreparedGram) else np.asarray(gram, dtype=float)
    S = np.asarray(support, dtype=int)
    if S.size == 0:
        raise ValueError("refit needs a nonempty support")
    lam = np.zeros(c.shape[0])
    block = G[np.ix_(S, S)]
    ridge = False
    try:
        chol = np.linalg.cholesky(block)
        sol = np.linalg.solve(chol.T, np.linalg.solve(chol, c[S]))
    except np.linalg.LinAlgError:
        ridge = True
    else:
        ridge = not np.all(np.isfinite(sol))
    if ridge:
        jitter = 1e-10 * np.trace(block) / S.size
        warnings.warn(f"singular Gram block on support of size {S.size}; ridge jitter {jitter:g}",
                      RefitWarning, stacklevel=2)
        sol = np.linalg.solve(block + jitter * np.eye(S.size), c[S])
    lam[S] = sol
    return lam, ridge


def bic_penalty(k: int, n: int) -> float:
    return 0.5 * k * math.log(n) / n


@dataclass
class CvSelection:
    k_hat: int
    w_final: float
    fit: SpadesFit
    per_k_loss: dict[int, float]
    penalty_curve: dict[int, float]
    folds: int
    seed: int
    full_path: Optional[TuningPath] = field(default=None, repr=False)
    fold_paths: list = field(default_factory=list, repr=False)
    bbm_fallback: bool = False

    def table(self):
        """Rows (k, w_k, L_k, penalized) over the candidate sizes; w_k is NaN when the
        full-data path has no entry for that size."""
        rows = []
        for k in sorted(self.per_k_loss):
            w = math.nan
            if self.full_path is not None and k in self.full_path.entries:
                w = self.full_path.entries[k]
            rows.append((k, w, self.per_k_loss[k], self.penalty_curve[k]))
        return rows


def fold_assignment(n: int, p: int, seed: int) -> list[np.ndarray]:
    """One seeded shuffle, then ``p`` contiguous blocks."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(block) for block in np.array_split(perm, p)]


def cv_select(
    sample,
    dictionary: Dictionary,
    settings: Optional[SolverSettings] = None,
    p: int = DEFAULT_FOLDS,
    seed: int = 0,
    alpha_rel: float = 1e-6,
    features: Optional[np.ndarray] = None,
    with_full_path: bool = False,
) -> CvSelection:
    """Dimension-stabilized p-fold cross-validation over GBM support sizes.

    Sizes that are not discovered in every fold are dropped from the argmin.
    When bisection on the full sample cannot hit k_hat, the full-data GBM
    path is consulted as a fallback (``bbm_fallback=True``).
    """
    if p < 2:
        raise ValueError("need at least two folds")
    F = dictionary.feature_matrix(sample) if features is None else features
    n = F.shape[0]
    if n < p:
        raise ValueError(f"sample of size {n} cannot be split into {p} folds")
    pg = prepare_gram(dictionary.gram)
    folds = fold_assignment(n, p, seed)
    all_rows = np.arange(n)

    losses: dict[int, list[float]] = {}
    fold_paths = []
    for held in folds:
        train = np.setdiff1d(all_rows, held, assume_unique=True)
        m_train = moments_from_features(F, train)
        m_test = moments_from_features(F, held)
        c_tr = m_train.c
        path = gbm_path(c_tr, pg, settings, alpha_rel * zero_level(c_tr))
        fold_paths.append(path)
        for k in path.ks:
            if k == 0:
                continue
            lam, _ = refit_on_support(path.support(k), c_tr, pg)
            losses.setdefault(k, []).append(empirical_loss(lam, m_test.c, pg.dense))

    per_k = {k: float(np.mean(v)) for k, v in losses.items() if len(v) == p}
    if not per_k:
        raise TargetNotFound("no support size was discovered in every fold")
    curve = {k: per_k[k] + bic_penalty(k, n) for k in per_k}
    k_hat = min(curve, key=lambda k: (curve[k], k))

    full = moments_from_features(F)
    ps = _PathSolver(full.c, pg, settings)
    alpha = alpha_rel * zero_level(full.c)
    fallback = False
    full_path = None
    try:
        w_final = bbm_find(k_hat, full.c, pg, alpha=alpha, _solver=ps)
    except TargetNotFound:
        fallback = True
        full_path = gbm_path(full.c, pg, alpha=alpha, _solver=ps)
        if k_hat not in full_path.entries:
            raise
        w_final = full_path.entries[k_hat]
    if with_full_path and full_path is None:
        full_path = gbm_path(full.c, pg, alpha=alpha, _solver=ps)
    fit = ps.fit(w_final)
    return CvSelection(
        k_hat=k_hat,
        w_final=w_final,
        fit=fit,
        per_k_loss=per_k,
        penalty_curve=curve,
        folds=p,
        seed=seed,
        full_path=full_path,
        fold_paths=fold_paths,
        bbm_fallback=fallback,
    )
