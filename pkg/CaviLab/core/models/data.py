"""
Seeded synthetic data for the data-driven targets.

Every generator takes an explicit ``numpy.random.Generator`` built from the seed, so the
same (family, params, seed) always yields the same model.
"""

from typing import Any, Callable, Dict, Mapping, Union

import numpy as np
from scipy.special import ndtr
from scipy.stats import truncnorm

from CaviLab.core.exceptions import ParameterError, UnsupportedModelError
from CaviLab.core.logging import get_logger
from CaviLab.core.models.base import ModelFamily, TargetModel
from CaviLab.core.models.latent import GMM2, Probit
from CaviLab.core.models.meanprec import GaussMeanPrec

logger = get_logger(__name__)


def _size(params: Mapping[str, Any], name: str, default: int) -> int:
    value = params.get(name, default)
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ParameterError(f"{name} must be a positive integer", {name: value})
    return int(value)


def _coefficients(value: Any, p: int) -> np.ndarray:
    beta = np.asarray(value, dtype=float)
    if beta.ndim == 0:
        return np.full(p, float(beta))
    if beta.shape != (p,):
        raise ParameterError("beta_true must be a scalar or have length p", {"p": p, "len": beta.size})
    return beta


def orthogonal_design(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """n x p design with X'X = n I, from the Q factor of a Gaussian matrix."""
    if n < p:
        raise ParameterError("an orthogonal design needs n >= p", {"n": n, "p": p})
    q_factor, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return np.sqrt(n) * q_factor


def _probit(params: Mapping[str, Any], rng: np.random.Generator) -> Probit:
    n = _size(params, 'n', 200)
    p = _size(params, 'p', 5)
    beta = _coefficients(params.get('beta_true', 0.0), p)
    design = params.get('design', 'gaussian')
    if design == 'gaussian':
        X = rng.standard_normal((n, p))
    elif design == 'orthogonal':
        X = orthogonal_design(n, p, rng)
    else:
        raise ParameterError("design must be 'gaussian' or 'orthogonal'", {"design": design})
    y = (rng.uniform(size=n) < ndtr(X @ beta)).astype(np.int64)
    return Probit(X, y, params.get('kappa', 1.0))


def _gmm2(params: Mapping[str, Any], rng: np.random.Generator) -> GMM2:
    n = _size(params, 'n', 500)
    mu_true = float(params.get('mu_true', 4.0))
    truncate = params.get('truncate')
    labels = rng.integers(0, 2, size=n)
    if truncate is None:
        noise = rng.standard_normal(n)
    else:
        bound = float(truncate)
        if not bound > 0.0:
            raise ParameterError("truncate must be positive", {"truncate": truncate})
        noise = truncnorm.rvs(-bound, bound, size=n, random_state=rng)
    return GMM2(labels * mu_true + noise, params.get('tau0', 1.0))


def _gauss_mean_prec(params: Mapping[str, Any], rng: np.random.Generator) -> GaussMeanPrec:
    n = _size(params, 'n', 500)
    tau = float(params.get('tau', 1.0))
    if not tau > 0.0:
        raise ParameterError("tau must be positive", {"tau": tau})
    x = float(params.get('mu', 0.0)) + rng.standard_normal(n) / np.sqrt(tau)
    return GaussMeanPrec(x, params.get('kappa', 1.0), params.get('a0', 1.0), params.get('b0', 1.0))


_GENERATORS: Dict[ModelFamily, Callable[[Mapping[str, Any], np.random.Generator], TargetModel]] = {
    ModelFamily.PROBIT: _probit,
    ModelFamily.GMM2: _gmm2,
    ModelFamily.GAUSS_MEAN_PREC: _gauss_mean_prec,
}


def generate_data(
    family: Union[str, ModelFamily], params: Mapping[str, Any], seed: int
) -> TargetModel:
    """
    Build a data-driven model from synthetic draws.

    Args:
        family: ``probit``, ``gmm2`` or ``gauss_mean_prec``
        params: generator parameters (sizes, true values, priors)
        seed: seed of the generator

    Raises:
        UnsupportedModelError: family has no data to generate
        ParameterError: invalid sizes or hyperparameters
    """
    try:
        family = ModelFamily(family)
    except ValueError as e:
        raise UnsupportedModelError("unknown model family", {"family": family}) from e
    if family not in _GENERATORS:
        raise UnsupportedModelError("family has no synthetic data generator", {"family": family.value})
    rng = np.random.default_rng(seed)
    model = _GENERATORS[family](params, rng)
    logger.debug("Generated %s data with seed %s", family.value, seed)
    return model


__all__ = ['generate_data', 'orthogonal_design']
