"""Posterior draw containers and weighted-quantile interval machinery.

Draws live in standardized space (where the networks operate) together
with the standardization record needed to map anything back to the data
scale. Weights, when present, are self-normalized so they average to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .standardize import (StandardizationRecord, unstandardize_global_draws,
                          unstandardize_local_draws)

__all__ = ["PosteriorDraws", "weighted_quantile", "global_param_names", "local_param_names"]


def global_param_names(d: int, q: int, infer_noise: bool = True) -> list[str]:
    names = [f"beta[{j}]" for j in range(d)]
    names += [f"sigma[{j}]" for j in range(q)]
    if infer_noise:
        names.append("sigma_eps")
    return names


def local_param_names(m: int, q: int) -> list[str]:
    return [f"alpha[{i},{j}]" for i in range(m) for j in range(q)]


def weighted_quantile(values: np.ndarray, probs, weights: np.ndarray | None = None) -> np.ndarray:
    """Inclusive cumulative-weight interpolation quantiles.

    With unit weights this matches linear-interpolation empirical
    quantiles; all mass on one draw collapses every quantile onto it.
    """
    values = np.asarray(values, dtype=np.float64)
    probs = np.atleast_1d(np.asarray(probs, dtype=np.float64))
    if values.ndim != 1:
        raise DimensionError("weighted_quantile expects a 1-d value array")
    if weights is None:
        weights = np.ones_like(values)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != values.shape:
        raise DimensionError("weights must match values")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ConfigError("weights must be nonnegative with positive total")
    # zero-weight draws carry no mass and must not anchor interpolation
    keep = weights > 0
    values, weights = values[keep], weights[keep]
    order = np.argsort(values)
    v = values[order]
    w = weights[order]
    cum = np.cumsum(w) - 0.5 * w
    cum /= w.sum()
    return np.interp(probs, cum, v, left=v[0], right=v[-1])


@dataclass
class PosteriorDraws:
    """k joint draws per parameter block, in standardized constrained
    space, with flow densities and optional self-normalized importance
    weights."""

    global_std: np.ndarray            # (k, d + q [+1])
    log_q_global: np.ndarray          # (k,)
    d: int
    q: int
    infer_noise: bool
    rec: StandardizationRecord
    local_std: np.ndarray | None = None     # (k, m, q)
    log_q_local: np.ndarray | None = None   # (k, m)
    weights: np.ndarray | None = None        # (k,), mean 1
    local_weights: np.ndarray | None = None  # (k, m), mean 1 per group
    dataset_id: str = ""

    @property
    def k(self) -> int:
        return self.global_std.shape[0]

    @property
    def m(self) -> int:
        return 0 if self.local_std is None else self.local_std.shape[1]

    @property
    def p_global(self) -> int:
        return self.d + self.q + (1 if self.infer_noise else 0)

    def param_names(self) -> list[str]:
        return global_param_names(self.d, self.q, self.infer_noise)

    # -- data-scale views ---------------------------------------------------

    def global_data(self) -> np.ndarray:
        return unstandardize_global_draws(self.global_std, self.d, self.q,
                                          self.rec, self.infer_noise)

    def local_data(self) -> np.ndarray:
        if self.local_std is None:
            raise ConfigError("no local draws present")
        return unstandardize_local_draws(self.local_std, self.q, self.rec)

    # -- weighted statistics --------------------------------------------------

    def global_mean(self, data_scale: bool = True) -> np.ndarray:
        w = self.weights if self.weights is not None else np.ones(self.k)
        draws = self.global_data() if data_scale else self.global_std
        return (draws * w[:, None]).sum(axis=0) / w.sum()

    def local_mean(self, data_scale: bool = True) -> np.ndarray:
        if self.local_std is None:
            raise ConfigError("no local draws present")
        w = self.local_weights if self.local_weights is not None else np.ones((self.k, self.m))
        draws = self.local_data() if data_scale else self.local_std
        return np.einsum("kmq,km->mq", draws, w) / w.sum(axis=0)[:, None]

    def global_interval_std(self, j: int, alpha: float,
                            adjust: float = 0.0) -> tuple[float, float]:
        """Equal-tailed (1 - alpha) interval of global component j in
        standardized space, borders pushed outward by `adjust`."""
        lo, hi = weighted_quantile(self.global_std[:, j], [alpha / 2, 1 - alpha / 2], self.weights)
        return float(lo - adjust), float(hi + adjust)

    def local_interval_std(self, i: int, j: int, alpha: float,
                           adjust: float = 0.0) -> tuple[float, float]:
        w = None if self.local_weights is None else self.local_weights[:, i]
        lo, hi = weighted_quantile(self.local_std[:, i, j], [alpha / 2, 1 - alpha / 2], w)
        return float(lo - adjust), float(hi + adjust)
