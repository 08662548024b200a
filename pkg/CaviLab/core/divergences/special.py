"""
Special functions used by the closed-form divergences and bounds.

The normal hazard is evaluated through the scaled complementary error function so it
stays accurate far into both tails; the naive ratio phi/(1 - Phi) loses everything past
t of about 8.
"""

import math
from typing import Union

import numpy as np
from scipy.special import erfcx, expit

from CaviLab.core.exceptions import ParameterError

ArrayLike = Union[float, np.ndarray]

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SQRT_2 = math.sqrt(2.0)


def hazard(t: ArrayLike) -> ArrayLike:
    """
    Standard normal hazard H(t) = phi(t) / (1 - Phi(t)).

    Uses 1 - Phi(t) = exp(-t^2/2) erfcx(t/sqrt(2)) / 2, so
    H(t) = sqrt(2/pi) / erfcx(t/sqrt(2)). Scalars in, float out; arrays in, arrays out.
    """
    values = SQRT_2_OVER_PI / erfcx(np.asarray(t, dtype=float) / _SQRT_2)
    if np.ndim(values) == 0:
        return float(values)
    return values


def lambert_w0(x: float) -> float:
    """
    Principal branch of the Lambert W function on [0, inf).

    Solves w * exp(w) = x by Halley's method, started from log1p(x) below e and from the
    asymptotic log(x) - log(log(x)) above it.

    Raises:
        ParameterError: if x is negative or not finite
    """
    x = float(x)
    if not math.isfinite(x) or x < 0.0:
        raise ParameterError("lambert_w0 requires a finite non-negative argument", {"x": x})
    if x == 0.0:
        return 0.0

    if x < math.e:
        w = math.log1p(x)
    else:
        log_x = math.log(x)
        w = log_x - math.log(log_x)

    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= dw
        if abs(dw) <= 1e-16 * (1.0 + abs(w)):
            break
    return w


def expit_difference(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    """
    sigmoid(a) - sigmoid(b) without cancellation:
    sinh((a - b)/2) / (2 cosh(a/2) cosh(b/2)).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    values = np.sinh((a - b) / 2.0) / (2.0 * np.cosh(a / 2.0) * np.cosh(b / 2.0))
    if np.ndim(values) == 0:
        return float(values)
    return values


def two_point_kl_terms(logit_p: np.ndarray, logit_q: np.ndarray) -> np.ndarray:
    """
    Elementwise KL(Bernoulli(sigmoid(lp)) || Bernoulli(sigmoid(lq))).

    Written as r d - log1p(s expm1(d)) with d = lp - lq, after reflecting both logits so
    that r <= 1/2; the reflection leaves KL unchanged.
    """
    lp = np.asarray(logit_p, dtype=float)
    lq = np.asarray(logit_q, dtype=float)
    flip = lp > 0.0
    lp = np.where(flip, -lp, lp)
    lq = np.where(flip, -lq, lq)
    d = lp - lq
    r = expit(lp)
    s = expit(lq)
    terms = r * d - np.log1p(s * np.expm1(d))
    return np.maximum(terms, 0.0)


__all__ = [
    'SQRT_2_OVER_PI',
    'hazard',
    'lambert_w0',
    'expit_difference',
    'two_point_kl_terms',
]
