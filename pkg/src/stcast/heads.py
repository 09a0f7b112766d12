"""Output distribution heads: link functions, log-likelihoods, gradients.

Raw head outputs map to valid parameters through smooth links (softplus
keeps the scale positive with a small floor; degrees of freedom sit at
2 + softplus so the variance always exists).  Each family provides the
exact negative log-density and its gradient w.r.t. the raw outputs, used
by the trainer's backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln

from .errors import InputValidationError

FAMILIES = ("gaussian", "laplace", "student_t")
PARAM_ARITY = {"gaussian": 2, "laplace": 2, "student_t": 3}

SIGMA_FLOOR = 1e-6

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class DistributionParams:
    """Validated location/scale (and tail) parameters."""

    family: str
    mu: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputValidationError(f"unknown family {self.family!r}")
        if np.any(np.asarray(self.sigma) <= 0):
            raise InputValidationError("sigma must be strictly positive")
        if self.family == "student_t":
            if self.nu is None or np.any(np.asarray(self.nu) <= 2):
                raise InputValidationError("student_t needs nu > 2")


def project_raw(raw: np.ndarray, family: str) -> DistributionParams:
    """Map raw affine outputs (..., arity) to distribution parameters:
    mu = raw0, sigma = softplus(raw1) + floor, nu = 2 + softplus(raw2)."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != PARAM_ARITY[family]:
        raise InputValidationError(
            f"{family} head expects {PARAM_ARITY[family]} raw outputs, "
            f"got {raw.shape[-1]}"
        )
    mu = raw[..., 0]
    sigma = softplus(raw[..., 1]) + SIGMA_FLOOR
    nu = 2.0 + softplus(raw[..., 2]) if family == "student_t" else None
    return DistributionParams(family=family, mu=mu, sigma=sigma, nu=nu)


# ---------------------------------------------------------------------------
# Negative log-likelihoods
# ---------------------------------------------------------------------------

def nll(params: DistributionParams, y) -> np.ndarray:
    """Elementwise negative log-density of y under the parameters."""
    y = np.asarray(y, dtype=float)
    mu, sigma = params.mu, params.sigma
    if params.family == "gaussian":
        z = (y - mu) / sigma
        return _HALF_LOG_2PI + np.log(sigma) + 0.5 * z * z
    if params.family == "laplace":
        return np.log(2.0 * sigma) + np.abs(y - mu) / sigma
    nu = params.nu
    z = (y - mu) / sigma
    q = 1.0 + z * z / nu
    return (-gammaln((nu + 1.0) / 2.0) + gammaln(nu / 2.0)
            + 0.5 * np.log(np.pi * nu) + np.log(sigma)
            + (nu + 1.0) / 2.0 * np.log(q))


def nll_grad_params(params: DistributionParams, y):
    """Gradients of the elementwise NLL w.r.t. (mu, sigma[, nu])."""
    y = np.asarray(y, dtype=float)
    mu, sigma = params.mu, params.sigma
    if params.family == "gaussian":
        z = (y - mu) / sigma
        dmu = -z / sigma
        dsigma = (1.0 - z * z) / sigma
        return dmu, dsigma, None
    if params.family == "laplace":
        sgn = np.sign(y - mu)
        dmu = -sgn / sigma
        dsigma = (1.0 - np.abs(y - mu) / sigma) / sigma
        return dmu, dsigma, None
    nu = params.nu
    z = (y - mu) / sigma
    q = 1.0 + z * z / nu
    common = (nu + 1.0) * z / (nu * q)
    dmu = -common / sigma
    dsigma = (1.0 - common * z) / sigma
    dnu = (0.5 * (digamma(nu / 2.0) - digamma((nu + 1.0) / 2.0))
           + 0.5 / nu + 0.5 * np.log(q)
           - (nu + 1.0) / 2.0 * z * z / (nu * nu * q))
    return dmu, dsigma, dnu


def nll_and_raw_grad(raw: np.ndarray, y, family: str):
    """NLL plus its gradient w.r.t. the raw head outputs (chain through
    the links).  Returns (nll_values, d_raw)."""
    raw = np.asarray(raw, dtype=float)
    params = project_raw(raw, family)
    values = nll(params, y)
    dmu, dsigma, dnu = nll_grad_params(params, y)
    d_raw = np.empty_like(raw)
    d_raw[..., 0] = dmu
    d_raw[..., 1] = dsigma * expit(raw[..., 1])   # d sigma / d raw1
    if family == "student_t":
        d_raw[..., 2] = dnu * expit(raw[..., 2])  # d nu / d raw2
    return values, d_raw


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample(params: DistributionParams, rng: np.random.Generator) -> np.ndarray:
    """One draw per parameter element."""
    mu = np.asarray(params.mu, dtype=float)
    sigma = np.asarray(params.sigma, dtype=float)
    if params.family == "gaussian":
        return rng.normal(mu, sigma)
    if params.family == "laplace":
        return rng.laplace(mu, sigma)
    return mu + sigma * rng.standard_t(np.asarray(params.nu, dtype=float))
