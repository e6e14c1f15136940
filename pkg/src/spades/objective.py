"""Empirical L2 loss, weighted l1 penalty and the weight choices that go with them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dictionary import Dictionary, EmpiricalMoments

WEIGHT_VARIANTS = ("simple", "bernstein", "data_driven", "scalar", "mixture")


def rate_r(M: int, n: int, delta: float) -> float:
    """sqrt(log(M / delta) / n)."""
    if M < 1 or n < 1:
        raise ValueError("M and n must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(math.log(M / delta) / n)


def mixture_rate(M: int, n: int, delta: float) -> float:
    """Selection-level rate sqrt(log(2 M^2 / delta) / n), i.e. r(M, n, delta / (2M))."""
    return rate_r(M, n, delta / (2.0 * M))


def mixture_L(sup_norms) -> float:
    """max(1/sqrt(3), max_j L_j)."""
    return max(1.0 / math.sqrt(3.0), float(np.max(sup_norms)))


@dataclass(frozen=True)
class WeightSpec:
    variant: str
    omega: np.ndarray
    delta: Optional[float] = None
    scalar: Optional[float] = None

    def __post_init__(self):
        if self.variant not in WEIGHT_VARIANTS:
            raise ValueError(f"unknown weight variant {self.variant!r}")
        omega = np.asarray(self.omega, dtype=float)
        if np.any(omega < 0) or not np.all(np.isfinite(omega)):
            raise ValueError("weights must be finite and nonnegative")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)

    @classmethod
    def constant(cls, w: float, M: int) -> "WeightSpec":
        return cls("scalar", np.full(M, float(w)), scalar=float(w))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "delta": self.delta,
            "scalar": self.scalar,
            "omega": self.omega.tolist(),
        }


def make_weights(
    dictionary: Dictionary,
    moments: EmpiricalMoments,
    n: int,
    delta: float,
    variant: str = "simple",
    scalar: Optional[float] = None,
) -> WeightSpec:
    """Build the penalty weights omega_j.

    Variants
    --------
    simple       4 L_j r(delta/2)
    bernstein    2 sqrt(2) sigma_j r + (8/3) L_j r^2, sigma_j the empirical
                 standard deviation of f_j(X) (diagnostic plug-in)
    data_driven  2 sqrt(2) T_j r + (8/3) L_j r^2 with
                 T_j^2 = 2 mean(f_j^2(X)) + 2 L_j^2 r^2
    mixture      4 L r with L = max(1/sqrt 3, max_j L_j) and the selection rate
                 sqrt(log(2 M^2 / delta) / n)
    scalar       omega_j = ``scalar`` for all j
    """
    M = dictionary.M
    L = np.asarray(dictionary.sup_norms, dtype=float)
    if variant == "scalar":
        if scalar is None or scalar < 0:
            raise ValueError("scalar weights need a nonnegative value")
        return WeightSpec.constant(scalar, M)
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if variant == "mixture":
        r = mixture_rate(M, n, delta)
        return WeightSpec("mixture", np.full(M, 4.0 * mixture_L(L) * r), delta=delta)
    r = rate_r(M, n, delta / 2.0)
    if variant == "simple":
        omega = 4.0 * L * r
    elif variant == "bernstein":
        var = np.maximum(moments.second_moment - moments.c**2, 0.0)
        omega = 2.0 * math.sqrt(2.0) * np.sqrt(var) * r + (8.0 / 3.0) * L * r**2
    elif variant == "data_driven":
        T = np.sqrt(2.0 * moments.second_moment + 2.0 * L**2 * r**2)
        omega = 2.0 * math.sqrt(2.0) * T * r + (8.0 / 3.0) * L * r**2
    else:
        raise ValueError(f"unknown weight variant {variant!r}")
    return WeightSpec(variant, omega, delta=delta)


def _omega(weights) -> np.ndarray:
    return weights.omega if isinstance(weights, WeightSpec) else np.asarray(weights, dtype=float)


def _c(moments) -> np.ndarray:
    return moments.c if isinstance(moments, EmpiricalMoments) else np.asarray(moments, dtype=float)


def empirical_loss(lam, moments, gram) -> float:
    """-2 lam.c + lam' Psi lam, the empirical L2 criterion up to ||f||^2."""
    lam = np.asarray(lam, dtype=float)
    return float(-2.0 * lam @ _c(moments) + lam @ (np.asarray(gram) @ lam))


def penalty(lam, weights) -> float:
    return float(2.0 * np.sum(_omega(weights) * np.abs(np.asarray(lam, dtype=float))))


def penalized_objective(lam, moments, gram, weights) -> float:
    return empirical_loss(lam, moments, gram) + penalty(lam, weights)


def coordinate_gradient(j: int, lam, moments, gram) -> float:
    """Partial derivative of the empirical loss in coordinate j."""
    lam = np.asarray(lam, dtype=float)
    return float(-2.0 * _c(moments)[j] + 2.0 * np.asarray(gram)[j] @ lam)


def l2_error_in_span(lambda_hat, lambda_star, gram) -> float:
    """||f_lambda_hat - f_lambda_star||^2 = D' Psi D with D = lambda_hat - lambda_star."""
    delta = np.asarray(lambda_hat, dtype=float) - np.asarray(lambda_star, dtype=float)
    return float(delta @ (np.asarray(gram) @ delta))


def soft_threshold(z, w):
    return np.sign(z) * np.maximum(np.abs(z) - w, 0.0)


def support(lam, tol: float = 0.0) -> np.ndarray:
    """Indices j with |lam_j| > tol."""
    return np.flatnonzero(np.abs(np.asarray(lam)) > tol)
