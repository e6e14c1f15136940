"""Simulation studies: mixture identification, mean separation, thick circle, bound checks.

Every replicate draws from its own generator seeded by
``[seed, cell key..., replicate]`` so results do not depend on execution
order or on how replicates are spread over worker processes.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dictionary import (
    Dictionary,
    DictionaryError,
    SampleSet,
    gaussian_dictionary,
    grid_means,
    haar_dictionary,
    haar_lmax,
)
from .objective import empirical_loss, l2_error_in_span, make_weights, mixture_L, support
from .optimizer import SolverSettings, solve
from .theory import check_conditions_mixture, corollary2_bound, oracle_bound, oracle_lhs
from .tuning import DEFAULT_FOLDS, TargetNotFound, cv_select, gbm_path

log = logging.getLogger(__name__)

ZERO_TOL = 1e-10
STUDY_KINDS = ("identification", "separation", "circle", "oracle_pd", "l1_bound")


@dataclass(frozen=True)
class MixtureTruth:
    """Mixture sum_j wbar_j p_j over a Gaussian dictionary.

    ``normalized_weights`` are the coefficients on the L2-normalized atoms,
    lambda*_j = wbar_j ||p_j||, as a length-M vector.
    """

    component_indices: tuple
    weights: tuple
    normalized_weights: np.ndarray = field(repr=False)

    @property
    def k_star(self) -> int:
        return len(self.component_indices)


def mixture_truth(dictionary: Dictionary, indices: Sequence[int], weights=None) -> MixtureTruth:
    if dictionary.kind != "gaussian":
        raise DictionaryError("mixture truths need a Gaussian dictionary")
    idx = tuple(int(i) for i in indices)
    if not idx or len(set(idx)) != len(idx) or min(idx) < 0 or max(idx) >= dictionary.M:
        raise ValueError("component indices must be distinct and within the dictionary")
    w = np.full(len(idx), 1.0 / len(idx)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(idx),) or np.any(w <= 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
        raise ValueError("mixture weights must be positive and sum to one")
    lam = np.zeros(dictionary.M)
    for j, wj in zip(idx, w):
        lam[j] = wj * dictionary.atoms[j].density_norm
    return MixtureTruth(idx, tuple(float(v) for v in w), lam)


def sample_mixture(truth: MixtureTruth, dictionary: Dictionary, n: int, seed) -> SampleSet:
    """Categorical component draw followed by a Gaussian draw from that component."""
    if dictionary.kind != "gaussian":
        raise DictionaryError("can only sample from Gaussian dictionaries")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = dictionary.d
    if n == 0:
        return SampleSet(np.empty((0, d)))
    comp = rng.choice(len(truth.component_indices), size=n, p=np.asarray(truth.weights))
    idx = np.asarray(truth.component_indices)[comp]
    means = dictionary.means[idx]
    taus = dictionary.taus[idx]
    return SampleSet(means + taus[:, None] * rng.standard_normal((n, d)))


def sample_circle(n: int, seed, radius: float = 10.0, thickness: float = 1.5) -> SampleSet:
    """Uniform angle, radius N(radius, thickness^2), mapped to the plane."""
    if radius <= 0 or thickness < 0:
        raise ValueError("radius must be positive and thickness nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    r = radius + thickness * rng.standard_normal(n)
    return SampleSet(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))


def greedy_centers(sample, min_dist: float) -> np.ndarray:
    """Scan points in order, keeping each one at distance >= min_dist from all kept ones."""
    if min_dist <= 0:
        raise ValueError("min_dist must be positive")
    pts = sample.points if isinstance(sample, SampleSet) else np.asarray(sample, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    kept = np.empty_like(pts)
    m = 0
    limit = min_dist * min_dist
    for x in pts:
        if m == 0 or np.min(np.sum((kept[:m] - x) ** 2, axis=1)) >= limit:
            kept[m] = x
            m += 1
    return kept[:m].copy()


def excess_loss_curve(sample, dictionary: Dictionary, settings: Optional[SolverSettings] = None,
                      path=None) -> dict[int, float]:
    """k -> empirical loss of the GBM path fit with k atoms, minus the minimum over k."""
    moments = dictionary.empirical_moments(sample)
    if path is None:
        path = gbm_path(moments, dictionary.gram, settings)
    losses = {k: empirical_loss(path.fits[k].lambda_hat, moments, dictionary.gram) for k in path.ks}
    gamma0 = min(losses.values())
    return {k: losses[k] - gamma0 for k in sorted(losses)}


def sample_haar_density(dictionary: Dictionary, coefficients, n: int, seed) -> SampleSet:
    """Draw from the piecewise-constant density sum_j coef_j psi_j on [0, 1]."""
    if dictionary.kind != "haar":
        raise DictionaryError("expected a Haar dictionary")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    top = max(a.level for a in dictionary.atoms) + 1
    cells = 2**max(top, 0)
    mids = (np.arange(cells) + 0.5) / cells
    dens = dictionary.feature_matrix(mids) @ np.asarray(coefficients, dtype=float)
    if np.any(dens < -1e-12):
        raise ValueError("coefficients do not define a nonnegative density")
    prob = np.maximum(dens, 0.0) / cells
    prob = prob / prob.sum()
    cell = rng.choice(cells, size=n, p=prob)
    return SampleSet((cell + rng.uniform(0.0, 1.0, n)) / cells)


@dataclass
class StudyConfig:
    kind: str = "identification"
    k_star: int = 2
    spacing: float = 4.0
    tau: float = 1.0
    M_grid: list = field(default_factory=lambda: [25, 50, 100, 200])
    n_grid: list = field(default_factory=lambda: [50, 100, 200])
    D_min_grid: list = field(default_factory=lambda: [4.0, 3.0, 2.0, 1.0, 0.5])
    replicates: int = 100
    delta: float = 0.1
    seed: int = 20100101
    selection: str = "cv"
    folds: int = DEFAULT_FOLDS
    threads: int = 1
    # circle
    n: int = 2000
    radius: float = 10.0
    thickness: float = 1.5
    min_dist: float = 1.0
    k_report: int = 80
    # oracle_pd
    l_max: Optional[int] = None
    haar_truth: Optional[dict] = None
    alpha: float = math.sqrt(2.0)
    weights: str = "simple"

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.selection not in ("cv", "fixed_omega"):
            raise ValueError("selection must be 'cv' or 'fixed_omega'")
        if self.kind in ("identification", "l1_bound") and min(self.M_grid) < self.k_star:
            raise ValueError("every dictionary size must be at least k_star")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @classmethod
    def from_dict(cls, cfg: dict) -> "StudyConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown study config keys: {sorted(unknown)}")
        return cls(**cfg)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StudyResult:
    kind: str
    cells: list
    replicates: list
    curve: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    runtimes: dict = field(default_factory=dict)

    def cell(self, **key):
        for row in self.cells:
            if all(row.get(k) == v for k, v in key.items()):
                return row
        raise KeyError(key)


def _rng_for(seed: int, key: Sequence[int], rep: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(k) for k in key], int(rep)])


def _mixture_replicate(args) -> dict:
    k_star, spacing, tau, M, n, rep, seed, key, selection, folds, delta = args
    rng = _rng_for(seed, key, rep)
    D = gaussian_dictionary(grid_means(spacing, M), tau)
    truth = mixture_truth(D, range(k_star))
    sample = sample_mixture(truth, D, n, rng)
    fold_seed = int(rng.integers(2**62))
    rec = {"replicate": rep, "fold_seed": fold_seed}
    try:
        if selection == "cv":
            sel = cv_select(sample, D, p=folds, seed=fold_seed)
            fit = sel.fit
            rec.update(k_hat=sel.k_hat, w_final=sel.w_final, bbm_fallback=sel.bbm_fallback)
        else:
            m = D.empirical_moments(sample)
            fit = solve(m, D.gram, make_weights(D, m, n, delta, "mixture"))
            rec.update(k_hat=fit.n_nonzero, w_final=float(fit.weights.omega[0]), bbm_fallback=False)
    except (TargetNotFound, ValueError, np.linalg.LinAlgError) as exc:
        rec.update(status=f"failed: {type(exc).__name__}", error=math.nan, hit=False,
                   l1_error=math.nan, support_size=-1, certified=False, negative_active=False)
        return rec
    lam = fit.lambda_hat
    S = support(lam, ZERO_TOL)
    rec.update(
        status="ok",
        error=l2_error_in_span(lam, truth.normalized_weights, D.gram),
        l1_error=float(np.sum(np.abs(lam - truth.normalized_weights))),
        hit=bool(np.array_equal(S, np.arange(k_star))),
        support_size=int(S.size),
        certified=bool(fit.certified),
        negative_active=bool(np.any(lam[S] < 0)),
    )
    return rec


def _map(fn, jobs, threads: int):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    return [fn(j) for j in jobs]


def _summarize(recs: list) -> dict:
    ok = [r for r in recs if r["status"] == "ok"]
    errs = np.array([r["error"] for r in ok]) if ok else np.array([math.nan])
    q25, med, q75 = np.percentile(errs, [25, 50, 75]) if ok else (math.nan,) * 3
    certified = [r for r in ok if r["certified"]]
    neg_rate = float(np.mean([r["negative_active"] for r in certified])) if certified else 0.0
    return {
        "median": float(med),
        "q25": float(q25),
        "q75": float(q75),
        "hit_rate": float(np.mean([r["hit"] for r in recs])) if recs else math.nan,
        "mean_k_hat": float(np.mean([r["k_hat"] for r in ok])) if ok else math.nan,
        "replicates": len(recs),
        "failed": len(recs) - len(ok),
        "negative_active_rate": neg_rate,
        "negativity_flag": bool(neg_rate > 0.05),
    }


def _mixture_cell(cfg: StudyConfig, spacing: float, M: int, n: int, extra: dict) -> tuple[dict, list]:
    key = (n, M, int(round(spacing * 1e6)))
    jobs = [
        (cfg.k_star, spacing, cfg.tau, M, n, rep, cfg.seed, key, cfg.selection, cfg.folds, cfg.delta)
        for rep in range(cfg.replicates)
    ]
    recs = _map(_mixture_replicate, jobs, cfg.threads)
    D = gaussian_dictionary(grid_means(spacing, M), cfg.tau)
    conds = check_conditions_mixture(D, mixture_truth(D, range(cfg.k_star)).normalized_weights, n, cfg.delta)
    base = {"M": M, "n": n, **extra, "k_star": cfg.k_star, "spacing": spacing}
    row = {**base, **_summarize(recs),
           "condition_A": conds.condition_A_ok, "condition_B": conds.condition_B_ok,
           "separation": conds.separation_ok}
    reps = [{**base, **r} for r in recs]
    return row, reps


def run_identification_study(config: StudyConfig) -> StudyResult:
    """Error and hit rate over the (n, M) grid for the N(a j, tau^2) dictionary with I* = first k* atoms."""
    cells, reps, runtimes = [], [], {}
    for n in config.n_grid:
        for M in config.M_grid:
            t0 = time.perf_counter()
            row, rr = _mixture_cell(config, config.spacing, int(M), int(n), {})
            runtimes[f"n={n},M={M}"] = time.perf_counter() - t0
            log.info("cell n=%s M=%s hit=%.2f median=%.4g", n, M, row["hit_rate"], row["median"])
            cells.append(row)
            reps.extend(rr)
    return StudyResult("identification", cells, reps, runtimes=runtimes)


def run_separation_study(config: StudyConfig) -> StudyResult:
    """Same pipeline with the mean spacing swept over ``D_min_grid`` at one (n, M)."""
    n, M = int(config.n_grid[0]), int(config.M_grid[0])
    cells, reps, runtimes = [], [], {}
    for dmin in config.D_min_grid:
        t0 = time.perf_counter()
        row, rr = _mixture_cell(config, float(dmin), M, n, {"D_min": float(dmin)})
        runtimes[f"D_min={dmin}"] = time.perf_counter() - t0
        log.info("cell D_min=%s hit=%.2f median=%.4g", dmin, row["hit_rate"], row["median"])
        cells.append(row)
        reps.extend(rr)
    return StudyResult("separation", cells, reps, runtimes=runtimes)


def run_circle_study(config: StudyConfig) -> StudyResult:
    """Greedy Gaussian dictionary on a thick-circle sample and its excess-loss curve."""
    t0 = time.perf_counter()
    rng = np.random.default_rng([int(config.seed), 0])
    sample = sample_circle(config.n, rng, config.radius, config.thickness)
    centers = greedy_centers(sample, config.min_dist)
    D = gaussian_dictionary(centers, config.tau)
    moments = D.empirical_moments(sample)
    path = gbm_path(moments, D.gram)
    curve = excess_loss_curve(sample, D, path=path)
    ks = [k for k in curve if k >= 1]
    k1 = min(ks)
    k_rep = min((k for k in ks if k >= config.k_report), default=max(ks))
    total = curve[k1]
    summary = {
        "M": D.M,
        "n": config.n,
        "discovered_sizes": len(curve),
        "solver_calls": path.fit_count,
        "path_converged": path.converged,
        "k_first": k1,
        "k_report": k_rep,
        "total_drop": total,
        "drop_beyond_report": curve[k_rep],
        "residual_ratio": curve[k_rep] / total if total > 0 else 0.0,
        "curve_nonnegative": bool(min(curve.values()) >= 0.0),
    }
    rows = [{"k": k, "w_k": path.entries[k], "excess_loss": v} for k, v in curve.items()]
    return StudyResult("circle", [summary], [], curve=rows, summary=summary,
                       runtimes={"total": time.perf_counter() - t0})


DEFAULT_HAAR_TRUTH = {"-1,0": 1.0, "0,0": 0.3, "1,1": -0.2, "2,1": 0.15, "3,5": 0.12}


def haar_truth_vector(dictionary: Dictionary, spec: Optional[dict] = None) -> np.ndarray:
    """Coefficient vector from a ``{"level,position": value}`` mapping."""
    spec = spec or DEFAULT_HAAR_TRUTH
    index = {(a.level, a.position): j for j, a in enumerate(dictionary.atoms)}
    lam = np.zeros(dictionary.M)
    for key, val in spec.items():
        l, k = (int(s) for s in str(key).split(","))
        if (l, k) not in index:
            raise ValueError(f"Haar atom {key} not in dictionary")
        lam[index[(l, k)]] = float(val)
    return lam


def _oracle_pd_replicate(args) -> dict:
    n, l_max, truth_spec, rep, seed, delta, alpha, variant = args
    D = haar_dictionary(l_max)
    lam_star = haar_truth_vector(D, truth_spec)
    rng = _rng_for(seed, (n, l_max), rep)
    sample = sample_haar_density(D, lam_star, n, rng)
    m = D.empirical_moments(sample)
    w = make_weights(D, m, n, delta, variant)
    fit = solve(m, D.gram, w)
    lhs = oracle_lhs("pd", fit.lambda_hat, lam_star, D.gram, w, alpha)
    rhs = oracle_bound("pd", lam_star, D.gram, w, n, delta, alpha, lambda_true=lam_star, kappa=1.0)
    rhs_lit = oracle_bound("pd", lam_star, D.gram, w, n, delta, alpha, lambda_true=lam_star,
                           kappa=1.0, extra_n_factor=True)
    return {"replicate": rep, "status": "ok", "lhs": lhs, "bound": rhs, "holds": bool(lhs <= rhs),
            "bound_literal": rhs_lit, "holds_literal": bool(lhs <= rhs_lit),
            "kkt_residual": fit.kkt_residual}


def run_oracle_pd_check(config: StudyConfig) -> StudyResult:
    """Frequency with which the positive-definite oracle inequality holds at the in-span truth."""
    n = int(config.n_grid[0])
    l_max = haar_lmax(n) if config.l_max is None else int(config.l_max)
    jobs = [(n, l_max, config.haar_truth, rep, config.seed, config.delta, config.alpha, config.weights)
            for rep in range(config.replicates)]
    recs = _map(_oracle_pd_replicate, jobs, config.threads)
    D = haar_dictionary(l_max)
    row = {"n": n, "M": D.M, "k_star": int(np.count_nonzero(haar_truth_vector(D, config.haar_truth))),
           "replicates": len(recs), "holds_rate": float(np.mean([r["holds"] for r in recs])),
           "holds_rate_literal": float(np.mean([r["holds_literal"] for r in recs])),
           "target": 1.0 - config.delta}
    return StudyResult("oracle_pd", [row], [{"n": n, **r} for r in recs], summary=row)


def _l1_bound_replicate(args) -> dict:
    k_star, spacing, tau, M, n, rep, seed, delta = args
    D = gaussian_dictionary(grid_means(spacing, M), tau)
    truth = mixture_truth(D, range(k_star))
    rng = _rng_for(seed, (n, M), rep)
    sample = sample_mixture(truth, D, n, rng)
    m = D.empirical_moments(sample)
    fit = solve(m, D.gram, make_weights(D, m, n, delta, "mixture"))
    l1 = float(np.sum(np.abs(fit.lambda_hat - truth.normalized_weights)))
    bound = corollary2_bound(k_star, mixture_L(D.sup_norms), M, n, delta)
    S = support(fit.lambda_hat, ZERO_TOL)
    return {"replicate": rep, "status": "ok", "l1_error": l1, "bound": bound,
            "holds": bool(l1 <= bound), "hit": bool(np.array_equal(S, np.arange(k_star)))}


def run_l1_bound_check(config: StudyConfig) -> StudyResult:
    """Frequency of the l1 bound under mixture-mode weights."""
    n, M = int(config.n_grid[0]), int(config.M_grid[0])
    jobs = [(config.k_star, config.spacing, config.tau, M, n, rep, config.seed, config.delta)
            for rep in range(config.replicates)]
    recs = _map(_l1_bound_replicate, jobs, config.threads)
    D = gaussian_dictionary(grid_means(config.spacing, M), config.tau)
    conds = check_conditions_mixture(D, mixture_truth(D, range(config.k_star)).normalized_weights,
                                     n, config.delta)
    row = {"n": n, "M": M, "k_star": config.k_star, "replicates": len(recs),
           "holds_rate": float(np.mean([r["holds"] for r in recs])),
           "hit_rate": float(np.mean([r["hit"] for r in recs])),
           "target": 1.0 - config.delta / M,
           "condition_A": conds.condition_A_ok, "condition_B": conds.condition_B_ok}
    return StudyResult("l1_bound", [row], [{"n": n, "M": M, **r} for r in recs], summary=row)


RUNNERS = {
    "identification": run_identification_study,
    "separation": run_separation_study,
    "circle": run_circle_study,
    "oracle_pd": run_oracle_pd_check,
    "l1_bound": run_l1_bound_check,
}


def run_study(config: StudyConfig) -> StudyResult:
    return RUNNERS[config.kind](config)
