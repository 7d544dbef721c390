"""Two-component Gaussian mixture estimation for binary biomarkers.

Raw measurements for a binary biomarker are modeled as a mixture of a normal
and an abnormal Gaussian component. The fitted components supply the two
class-conditional densities consumed by the binary likelihood kernel; the
mixing weight stays here, because the stage model owns the prior over event
occurrence.

Skewed measurements should be log-transformed by the caller before fitting;
the family is fixed to two Gaussians. Without a reference mask, the
lower-mean component is reported as normal, so flip the sign of measurements
that decrease with disease or pass a reference mask instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateDataError, ValidationError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TwoComponentFit:
    """Fitted normal/abnormal components of a 1-D two-Gaussian mixture."""

    mu_normal: float
    sigma_normal: float
    mu_abnormal: float
    sigma_abnormal: float
    weight_normal: float
    converged: bool
    iterations: int
    log_likelihood_trace: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.sigma_normal > 0 and self.sigma_abnormal > 0):
            raise ValidationError("component sigmas must be positive")
        if not 0.0 < self.weight_normal < 1.0:
            raise ValidationError(
                f"weight_normal must lie in (0, 1), got {self.weight_normal!r}"
            )


def _component_log_pdf(x, mu, sigma):
    z = (x[:, None] - mu[None, :]) / sigma[None, :]
    return -0.5 * z * z - np.log(sigma)[None, :] - _LOG_SQRT_2PI


def fit_two_component(
    values,
    reference_mask=None,
    max_iterations: int = 500,
    tol: float = 1e-6,
) -> TwoComponentFit:
    """Fit a two-component 1-D Gaussian mixture by EM.

    With a reference mask, the normal component is initialized from the
    masked (reference-group) values and the abnormal component from the
    remainder; afterwards the component carrying more responsibility for the
    reference values is reported as normal, whatever the internal order.
    Without a mask, initialization splits at the 25th/75th percentiles and
    the lower-mean component is reported as normal.

    Component sds are floored at 1e-3 times the data sd to prevent collapse
    onto near-duplicate values. Convergence means a log-likelihood gain
    below ``tol`` between successive iterations; hitting ``max_iterations``
    first returns converged=False.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    finite = np.isfinite(x)
    if reference_mask is not None:
        mask = np.asarray(reference_mask, dtype=bool).ravel()
        if mask.shape != x.shape:
            raise ValidationError(
                f"reference_mask has length {mask.size}, values have {x.size}"
            )
        mask = mask[finite]
    x = x[finite]
    n = x.size
    if n < 10:
        raise ValidationError(f"need at least 10 finite values, got {n}")
    if np.all(x == x[0]):
        raise DegenerateDataError("all values identical; no mixture to fit")
    data_sd = float(x.std())
    sd_floor = 1e-3 * data_sd

    if reference_mask is not None:
        if int(mask.sum()) < 2:
            raise ValidationError("reference_mask must select at least 2 finite values")
        ref, rest = x[mask], x[~mask]
        mu = np.array([
            ref.mean(),
            rest.mean() if rest.size else ref.mean() + data_sd,
        ])
        sigma = np.array([
            max(float(ref.std()), sd_floor),
            max(float(rest.std()) if rest.size > 1 else data_sd, sd_floor),
        ])
        w0 = float(np.clip(mask.mean(), 1.0 / n, 1.0 - 1.0 / n))
    else:
        q25, q75 = np.percentile(x, [25.0, 75.0])
        if q25 == q75:
            # Heavy duplication can pinch the quartiles together; spread the
            # starting means so EM can separate.
            q25, q75 = q25 - 0.5 * data_sd, q75 + 0.5 * data_sd
        mu = np.array([q25, q75])
        sigma = np.full(2, max(0.5 * data_sd, sd_floor))
        w0 = 0.5

    weights = np.array([w0, 1.0 - w0])
    trace = []
    prev_ll = -np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        joint = _component_log_pdf(x, mu, sigma) + np.log(weights)[None, :]
        per_value = logsumexp(joint, axis=1)
        ll = float(per_value.sum())
        assert ll >= prev_ll - 1e-9 * (1.0 + abs(prev_ll)), (
            "EM log-likelihood decreased"
        )
        trace.append(ll)
        if ll - prev_ll < tol:
            converged = True
            break
        prev_ll = ll
        resp = np.exp(joint - per_value[:, None])
        totals = resp.sum(axis=0)
        weights = np.clip(totals / n, 1e-12, 1.0 - 1e-12)
        weights = weights / weights.sum()
        mu = (resp * x[:, None]).sum(axis=0) / totals
        var = (resp * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / totals
        sigma = np.maximum(np.sqrt(var), sd_floor)

    if reference_mask is not None:
        joint = _component_log_pdf(x, mu, sigma) + np.log(weights)[None, :]
        resp = np.exp(joint - logsumexp(joint, axis=1)[:, None])
        normal_idx = int(np.argmax(resp[mask].mean(axis=0)))
    else:
        normal_idx = int(np.argmin(mu))
    other = 1 - normal_idx
    w_normal = float(weights[normal_idx])
    return TwoComponentFit(
        mu_normal=float(mu[normal_idx]),
        sigma_normal=float(sigma[normal_idx]),
        mu_abnormal=float(mu[other]),
        sigma_abnormal=float(sigma[other]),
        weight_normal=min(max(w_normal, 1e-12), 1.0 - 1e-12),
        converged=converged,
        iterations=iterations,
        log_likelihood_trace=tuple(trace),
    )


def event_probability_pairs(values, fit: TwoComponentFit) -> np.ndarray:
    """Class-conditional densities (p_not_event, p_event) per value.

    These are the two component densities evaluated at each value, not
    posterior responsibilities: the stage model supplies the prior over
    event occurrence, so the data term must stay a plain likelihood. Missing
    (non-finite) values map to missing cells (NaN pairs). Order-preserving.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    out = np.full((x.size, 2), np.nan)
    ok = np.isfinite(x)
    for col, (mu, sigma) in enumerate(
        [(fit.mu_normal, fit.sigma_normal), (fit.mu_abnormal, fit.sigma_abnormal)]
    ):
        z = (x[ok] - mu) / sigma
        out[ok, col] = np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    return out
