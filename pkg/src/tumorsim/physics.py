"""Mixing potential, constitutive functions, source terms, and validation.

The potential splits as F = C + B with a convex logarithmic part
C(phi) = phi*log(phi) + (1-phi)*log(1-phi) and a concave quadratic part
B(phi) = theta*phi*(1-phi).  The time stepper treats C' implicitly and B'
explicitly, so the two derivative families are exposed separately.

Parameter and initial-data checks are keyed to the model's assumption tags
(aHl), (aQ), (iphi), (iP); validation errors cite the tag they violate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .fields import ScalarField


class DomainViolation(ValueError):
    """An argument left the admissible domain of the potential."""


@dataclass(frozen=True)
class PotentialSpec:
    """Concave-strength theta plus the numerical floor of the domain.

    Evaluation is confined to [clamp_margin, 1 - clamp_margin]; Newton
    iterates get projected into that band before the logarithms are touched.
    Vanishing-interface runs need theta < 2 so that F'' >= 4 - 2*theta > 0.
    """

    theta: float = 2.5
    clamp_margin: float = 1e-9

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if not (0 < self.clamp_margin < 0.5):
            raise ValueError("clamp_margin must lie in (0, 0.5)")


@dataclass(frozen=True)
class ModelParams:
    """All model constants and solver knobs.

    lambda1/lambda2/lambda3 are the apoptosis, necrosis and lysing rates;
    nu1/nu2 the nutrient transfer rates; n_c the capillary nutrient level;
    n_N the necrotic threshold.  The mitotic and uptake rates are fixed to 1.
    eps scales the interface energy (eps = 1 is the base model); delta >= 0
    switches on the regularized scheme.
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    nu1: float = 1.0
    nu2: float = 1.0
    n_c: float = 0.5
    n_N: float = 0.4
    theta: float = 2.5
    eps: float = 1.0
    delta: float = 0.0
    sigmaH: float = 0.05
    picard_tol: float = 1e-8
    newton_tol: float = 1e-9
    lin_tol: float = 1e-10
    cfl: float = 0.5

    @property
    def potential(self) -> PotentialSpec:
        return PotentialSpec(theta=self.theta)

    def param_errors(self) -> list[str]:
        """Violated parameter assumptions, one message per violation."""
        errs = []
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if v < 0:
                errs.append(f"(aHl) violated: lambda_i >= 0 ({name} = {v})")
        if not (0 < self.n_c < 1):
            errs.append(f"(aQ) violated: 0 < n_c < 1 (n_c = {self.n_c})")
        if self.nu1 < 0 or self.nu2 < 0:
            errs.append(f"(aQ) violated: nu1, nu2 >= 0 (nu1 = {self.nu1}, nu2 = {self.nu2})")
        if not (0 <= self.n_N <= 1):
            errs.append(f"n_N must lie in [0, 1] (n_N = {self.n_N})")
        if self.theta < 0:
            errs.append(f"theta must be >= 0 (theta = {self.theta})")
        if not self.eps > 0:
            errs.append(f"eps must be positive (eps = {self.eps})")
        if not (0 <= self.delta < 0.25):
            errs.append(f"delta must lie in [0, 1/4) (delta = {self.delta})")
        if not self.sigmaH > 0:
            errs.append(f"sigmaH must be positive (sigmaH = {self.sigmaH})")
        if not (0 < self.cfl <= 1):
            errs.append(f"cfl must lie in (0, 1] (cfl = {self.cfl})")
        for name in ("picard_tol", "newton_tol", "lin_tol"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be positive")
        return errs


def _as_array(x):
    return np.asarray(x, dtype=float)


def _like_input(value, template):
    if np.isscalar(template) or getattr(template, "ndim", 1) == 0:
        return float(value)
    return value


def potential_value(phi, p: PotentialSpec):
    """F(phi) = phi*log(phi) + (1-phi)*log(1-phi) + theta*phi*(1-phi).

    The endpoint values use the limit x*log(x) -> 0.  Raises DomainViolation
    outside [0, 1], where the convex part is +infinity.
    """
    x = _as_array(phi)
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise DomainViolation("potential argument must lie in [0, 1]")
    val = xlogy(x, x) + xlogy(1.0 - x, 1.0 - x) + p.theta * x * (1.0 - x)
    return _like_input(val, phi)


def potential_dC(phi):
    """C'(phi) = log(phi / (1 - phi)); diverges at the endpoints."""
    x = _as_array(phi)
    if np.any(~np.isfinite(x)) or np.any(x <= 0) or np.any(x >= 1):
        raise DomainViolation("C' requires phi strictly inside (0, 1)")
    return _like_input(np.log(x / (1.0 - x)), phi)


def potential_dB(phi, p: PotentialSpec):
    """B'(phi) = theta*(1 - 2*phi)."""
    x = _as_array(phi)
    return _like_input(p.theta * (1.0 - 2.0 * x), phi)


def potential_d2(phi, p: PotentialSpec):
    """F''(phi) = 1/(phi*(1-phi)) - 2*theta; minimum 4 - 2*theta at 1/2."""
    x = _as_array(phi)
    if np.any(~np.isfinite(x)) or np.any(x <= 0) or np.any(x >= 1):
        raise DomainViolation("F'' requires phi strictly inside (0, 1)")
    return _like_input(1.0 / (x * (1.0 - x)) - 2.0 * p.theta, phi)


def heaviside_smooth(s, sigmaH: float):
    """Logistic ramp 1/(1 + exp(-s/sigmaH)): smooth, in (0, 1), increasing."""
    if not sigmaH > 0:
        raise ValueError("sigmaH must be positive")
    t = _as_array(s) / sigmaH
    # overflow-safe: exp of a nonpositive argument only
    e = np.exp(-np.abs(t))
    val = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _like_input(val, s)


def q_interp(phi):
    """Cubic smoothstep Q: clamps phi to [0,1], Q(0)=0, Q(1)=1, Q in [0,1]."""
    c = np.clip(_as_array(phi), 0.0, 1.0)
    return _like_input(c * c * (3.0 - 2.0 * c), phi)


def transfer_coefficient(phi, params: ModelParams):
    """kappa(phi) = nu1*(1 - Q(phi)) + nu2*Q(phi), nonnegative by (aQ)."""
    q = q_interp(phi)
    return params.nu1 * (1.0 - q) + params.nu2 * q


def source_st(n, p, phi, params: ModelParams):
    """Net tumor source S_T = n*P - lambda3*(Phi - P)."""
    return n * p - params.lambda3 * (phi - p)


def source_sd(n, p, phi, params: ModelParams):
    """Dead-cell source S_D = (lambda1 + lambda2*H(n_N - n))*P - lambda3*(Phi - P)."""
    h = heaviside_smooth(params.n_N - _as_array(n), params.sigmaH)
    return (params.lambda1 + params.lambda2 * h) * p - params.lambda3 * (phi - p)


def nutrient_tc(n, phi, params: ModelParams):
    """Capillary exchange T_c = kappa(phi) * (n_c - n)."""
    return transfer_coefficient(phi, params) * (params.n_c - n)


def validate(params: ModelParams, phi0: ScalarField, p0: ScalarField) -> list[str]:
    """Check every model assumption; return the list of violations (empty = pass)."""
    errs = params.param_errors()
    if phi0.min() < 0 or phi0.max() > 1:
        errs.append(
            f"(iphi) violated: 0 <= phi0 <= 1 (range [{phi0.min()}, {phi0.max()}])")
    if p0.min() < 0 or p0.max() > 1:
        errs.append(
            f"(iP) violated: 0 <= P0 <= 1 (range [{p0.min()}, {p0.max()}])")
    return errs
