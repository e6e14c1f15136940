"""Dictionaries of candidate functions for sparse density estimation.

Two kinds are supported: L2-normalized isotropic Gaussian densities on R^d
and the orthonormal Haar system on [0, 1]. A :class:`Dictionary` bundles the
atoms with their Gram matrix, sup-norms and L2 norms, all computed once at
construction and treated as read-only afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DictionaryError(ValueError):
    """Raised for malformed dictionaries, bad indices or dimension mismatches."""


@dataclass(frozen=True)
class SampleSet:
    """n observations in R^d stored as an ``(n, d)`` float array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise DictionaryError("sample points must form an (n, d) array")
        if pts.size and not np.all(np.isfinite(pts)):
            raise DictionaryError("sample contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, index) -> "SampleSet":
        return SampleSet(self.points[index])


@dataclass(frozen=True)
class GaussianAtom:
    mean: tuple
    tau: float

    @property
    def d(self) -> int:
        return len(self.mean)

    @property
    def density_norm(self) -> float:
        """L2 norm of the unnormalized Gaussian density, (4 pi tau^2)^(-d/4)."""
        return (4.0 * math.pi * self.tau**2) ** (-self.d / 4.0)

    @property
    def sup_norm(self) -> float:
        """Sup-norm of the normalized atom, (pi tau^2)^(-d/4)."""
        return (math.pi * self.tau**2) ** (-self.d / 4.0)


@dataclass(frozen=True)
class HaarAtom:
    """Haar wavelet psi_{l,k} on [0, 1]; ``level == -1`` is the constant father atom."""

    level: int
    position: int

    @property
    def sup_norm(self) -> float:
        return 1.0 if self.level < 0 else 2.0 ** (self.level / 2.0)


@dataclass(frozen=True)
class EmpiricalMoments:
    """Sample averages of f_j(X) and f_j(X)^2 for every atom."""

    c: np.ndarray
    second_moment: np.ndarray
    n: int

    @property
    def M(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Indexed family f_1..f_M with cached Gram matrix and norms.

    Use :func:`gaussian_dictionary` or :func:`haar_dictionary` to build one.
    Atom indices are zero-based in the Python API.
    """

    kind: str
    atoms: tuple
    gram: np.ndarray = field(repr=False)
    sup_norms: np.ndarray = field(repr=False)
    l2_norms: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in ("gaussian", "haar"):
            raise DictionaryError(f"unknown dictionary kind {self.kind!r}")
        if len(self.atoms) == 0:
            raise DictionaryError("dictionary must contain at least one atom")
        if np.any(np.diag(self.gram) <= 0):
            raise DictionaryError("degenerate atom with zero L2 norm")
        for arr in (self.gram, self.sup_norms, self.l2_norms):
            arr.setflags(write=False)

    @property
    def M(self) -> int:
        return len(self.atoms)

    @property
    def d(self) -> int:
        return self.atoms[0].d if self.kind == "gaussian" else 1

    @property
    def means(self) -> np.ndarray:
        if self.kind != "gaussian":
            raise DictionaryError("means are defined for Gaussian dictionaries only")
        return np.array([a.mean for a in self.atoms], dtype=float)

    @property
    def taus(self) -> np.ndarray:
        if self.kind != "gaussian":
            raise DictionaryError("taus are defined for Gaussian dictionaries only")
        return np.array([a.tau for a in self.atoms], dtype=float)

    def evaluate(self, j: int, x) -> float:
        """Value of atom ``j`` at the point ``x``."""
        if not 0 <= j < self.M:
            raise DictionaryError(f"atom index {j} out of range for M={self.M}")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.d,):
            raise DictionaryError(f"point has dimension {x.shape[0]}, expected {self.d}")
        return float(self._evaluate_atoms(x.reshape(1, -1), [j])[0, 0])

    def feature_matrix(self, points) -> np.ndarray:
        """``(n, M)`` matrix of f_j(X_i)."""
        pts = points.points if isinstance(points, SampleSet) else np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.shape[0] and pts.shape[1] != self.d:
            raise DictionaryError(f"points have dimension {pts.shape[1]}, expected {self.d}")
        return self._evaluate_atoms(pts, range(self.M))

    def _evaluate_atoms(self, pts: np.ndarray, index) -> np.ndarray:
        index = list(index)
        if self.kind == "gaussian":
            means = np.array([self.atoms[j].mean for j in index], dtype=float)
            taus = np.array([self.atoms[j].tau for j in index], dtype=float)
            sq = (
                np.sum(pts**2, axis=1)[:, None]
                - 2.0 * pts @ means.T
                + np.sum(means**2, axis=1)[None, :]
            )
            np.maximum(sq, 0.0, out=sq)
            sup = (math.pi * taus**2) ** (-self.d / 4.0)
            return sup[None, :] * np.exp(-sq / (2.0 * taus[None, :] ** 2))
        x = pts[:, 0]
        out = np.empty((pts.shape[0], len(index)))
        for col, j in enumerate(index):
            out[:, col] = _haar_value(self.atoms[j], x)
        return out

    def empirical_moments(self, sample) -> EmpiricalMoments:
        sample = as_sample(sample)
        if sample.n == 0:
            raise DictionaryError("empirical moments need a nonempty sample")
        return moments_from_features(self.feature_matrix(sample))


def moments_from_features(features: np.ndarray, rows=None) -> EmpiricalMoments:
    """Moments from a precomputed feature matrix, optionally restricted to ``rows``."""
    F = features if rows is None else features[rows]
    n = F.shape[0]
    if n == 0:
        raise DictionaryError("empirical moments need a nonempty sample")
    return EmpiricalMoments(c=F.mean(axis=0), second_moment=np.mean(F**2, axis=0), n=n)


def _haar_value(atom: HaarAtom, x: np.ndarray) -> np.ndarray:
    inside01 = (x >= 0.0) & (x <= 1.0)
    if atom.level < 0:
        return inside01.astype(float)
    scale = 2.0**atom.level
    t = scale * x - atom.position
    val = np.where((t >= 0.0) & (t < 0.5), 1.0, 0.0) - np.where((t >= 0.5) & (t < 1.0), 1.0, 0.0)
    # right endpoint x=1 belongs to the last cell of every level
    last = (x == 1.0) & (atom.position == int(scale) - 1)
    val = np.where(last, -1.0, val)
    return np.sqrt(scale) * val * inside01


def gaussian_gram(means: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """Closed-form Gram matrix of L2-normalized isotropic Gaussian densities.

    Uses the convolution identity int p_i p_j = N(mu_i - mu_j; 0, (tau_i^2 + tau_j^2) I)
    and divides by ||p_i|| ||p_j||. For equal scales this reduces to
    exp(-||mu_i - mu_j||^2 / (4 tau^2)).
    """
    means = np.asarray(means, dtype=float)
    taus = np.asarray(taus, dtype=float)
    d = means.shape[1]
    s2 = taus[:, None] ** 2 + taus[None, :] ** 2
    diff = means[:, None, :] - means[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    # log of (2 pi s2)^(-d/2) / ((4 pi ti^2)^(-d/4) (4 pi tj^2)^(-d/4))
    t2 = taus**2
    log_pref = (
        -0.5 * d * np.log(2.0 * math.pi * s2)
        + 0.25 * d * (np.log(4.0 * math.pi * t2)[:, None] + np.log(4.0 * math.pi * t2)[None, :])
    )
    G = np.exp(log_pref - sq / (2.0 * s2))
    G = np.triu(G)
    G = G + np.triu(G, 1).T
    np.fill_diagonal(G, 1.0)
    return G


def gaussian_dictionary(means, tau=1.0) -> Dictionary:
    """Dictionary of L2-normalized Gaussians N(mean_j, tau_j^2 I).

    ``means`` is an ``(M, d)`` array (or length-M sequence for d = 1);
    ``tau`` is a scalar or a length-M sequence of positive scales.
    """
    means = np.asarray(means, dtype=float)
    if means.ndim == 1:
        means = means.reshape(-1, 1)
    if means.ndim != 2 or means.shape[0] == 0:
        raise DictionaryError("means must be a nonempty (M, d) array")
    if not np.all(np.isfinite(means)):
        raise DictionaryError("means must be finite")
    taus = np.broadcast_to(np.asarray(tau, dtype=float), (means.shape[0],)).copy()
    if np.any(~np.isfinite(taus)) or np.any(taus <= 0):
        raise DictionaryError("tau must be positive and finite")
    atoms = tuple(GaussianAtom(tuple(m), float(t)) for m, t in zip(means, taus))
    return Dictionary(
        kind="gaussian",
        atoms=atoms,
        gram=gaussian_gram(means, taus),
        sup_norms=np.array([a.sup_norm for a in atoms]),
        l2_norms=np.ones(len(atoms)),
    )


def haar_lmax(n: int) -> int:
    """Largest l with 2^l <= n / log n (at least 0)."""
    if n < 2:
        return 0
    bound = n / math.log(n)
    l = 0
    while 2 ** (l + 1) <= bound:
        l += 1
    return l


def haar_dictionary(l_max: int, include_father: bool = True) -> Dictionary:
    """Orthonormal Haar system on [0, 1] up to level ``l_max``."""
    if l_max < 0:
        raise DictionaryError("l_max must be >= 0")
    atoms: list[HaarAtom] = [HaarAtom(-1, 0)] if include_father else []
    for l in range(l_max + 1):
        atoms.extend(HaarAtom(l, k) for k in range(2**l))
    M = len(atoms)
    return Dictionary(
        kind="haar",
        atoms=tuple(atoms),
        gram=np.eye(M),
        sup_norms=np.array([a.sup_norm for a in atoms]),
        l2_norms=np.ones(M),
    )


def empirical_moments(dictionary: Dictionary, sample: SampleSet) -> EmpiricalMoments:
    return dictionary.empirical_moments(sample)


def dictionary_from_config(cfg: dict, n: int | None = None) -> Dictionary:
    """Build a dictionary from a key-value mapping.

    Recognized keys::

        kind: gaussian | haar
        # gaussian
        means: [[...], ...]            explicit means, or
        grid: {spacing: a, count: M, dim: 1}   means a*j, j = 1..M (first axis)
        tau: 1.0
        # haar
        l_max: int                     (default: haar_lmax(n))
        include_father: true
    """
    kind = cfg.get("kind")
    if kind == "gaussian":
        if "means" in cfg:
            means = np.asarray(cfg["means"], dtype=float)
        elif "grid" in cfg:
            g = cfg["grid"]
            count = int(g["count"])
            dim = int(g.get("dim", 1))
            means = np.zeros((count, dim))
            means[:, 0] = float(g["spacing"]) * np.arange(1, count + 1)
        else:
            raise DictionaryError("gaussian dictionary needs 'means' or 'grid'")
        return gaussian_dictionary(means, cfg.get("tau", 1.0))
    if kind == "haar":
        l_max = cfg.get("l_max")
        if l_max is None:
            if n is None:
                raise DictionaryError("haar dictionary needs l_max or a sample size")
            l_max = haar_lmax(n)
        return haar_dictionary(int(l_max), bool(cfg.get("include_father", True)))
    raise DictionaryError(f"unknown dictionary kind {kind!r}")


def grid_means(spacing: float, count: int) -> np.ndarray:
    """Means a*j, j = 1..count, as an ``(count, 1)`` array."""
    return (spacing * np.arange(1, count + 1, dtype=float)).reshape(-1, 1)


def as_sample(points: Sequence | np.ndarray) -> SampleSet:
    return points if isinstance(points, SampleSet) else SampleSet(np.asarray(points, dtype=float))
