"""Post-hoc posterior refinement.

Importance sampling: flow draws get self-normalized weights computed from
the (conditional, by default) likelihood times the prior over the flow's
own density. Because the global posterior conditions on the data only and
the local posterior conditions on the globals, the two levels are
reweighted alternately, local first, plugging posterior means of the other
level into the likelihood; three rounds.

Conformal calibration: on held-out calibration sets, the signed distance
from the true parameter to the nearest border of the proposed credible
interval is collected per parameter role; its conformal quantile is an
additive border adjustment (positive widens, negative narrows) that is
applied to every later interval at that level.

All densities here live in standardized space: the standardized data
follow the same mixed-effects story exactly, and the standardized prior is
the pushforward of the sampled one (exact for the fixed effects via the
full covariance; the random-intercept aggregation is exact for a single
random effect and a documented diagonal approximation otherwise).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .draws import PosteriorDraws
from .errors import ConfigError, NumericError
from .simulate import GlobalParams, HierDataset, LocalParams, PriorSpec

log = logging.getLogger(__name__)

__all__ = [
    "ALPHA_GRID", "ConformalTable", "importance_weights",
    "conditional_log_likelihood", "marginal_log_likelihood",
    "alternating_refine", "build_conformal_table", "calibrate",
    "conformal_scores", "apply_calibration", "component_roles",
    "log_half_normal",
]

ALPHA_GRID = (0.05, 0.1, 0.2, 0.32, 0.5)
ROLES = ("fixed", "variance", "random")

_LOG_2PI = math.log(2.0 * math.pi)


def component_roles(d: int, q: int, infer_noise: bool = True) -> list[str]:
    """Role of each global draw component: fixed effects then variances."""
    return ["fixed"] * d + ["variance"] * (q + (1 if infer_noise else 0))


# ---------------------------------------------------------------------------
# densities


def log_half_normal(x: np.ndarray, tau) -> np.ndarray:
    """Density of |N(0, tau^2)| at x >= 0."""
    x = np.asarray(x, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    out = math.log(2.0) - np.log(tau) - 0.5 * _LOG_2PI - 0.5 * (x / tau) ** 2
    return np.where(x >= 0, out, -np.inf)


def _gaussian_loglik(ds: HierDataset, beta: np.ndarray, alpha: np.ndarray,
                     sigma_eps: np.ndarray) -> np.ndarray:
    """Vectorized conditional data log-likelihood.

    beta (k, d); alpha (k, m, q) or (m, q) shared across draws;
    sigma_eps (k,). Returns (k,).
    """
    mask = ds.mask
    mean = np.einsum("mnd,kd->kmn", ds.X, beta)
    if ds.q:
        a = alpha if alpha.ndim == 3 else np.broadcast_to(alpha, (beta.shape[0],) + alpha.shape)
        mean = mean + np.einsum("mnq,kmq->kmn", ds.Z[:, :, :ds.q], a)
    resid = (ds.y[None] - mean) * mask[None]
    ssq = (resid ** 2).sum(axis=(1, 2))
    n = float(mask.sum())
    s2 = sigma_eps ** 2
    return -0.5 * (n * _LOG_2PI + n * np.log(s2) + ssq / s2)


def _split_global(draws: np.ndarray, d: int, q: int, infer_noise: bool,
                  known_sigma_eps: float | None = None):
    beta = draws[:, :d]
    sigma_alpha = draws[:, d:d + q]
    if infer_noise:
        sigma_eps = draws[:, d + q]
    else:
        if known_sigma_eps is None:
            raise ConfigError("draws carry no noise component and none was supplied")
        sigma_eps = np.full(draws.shape[0], float(known_sigma_eps))
    return beta, sigma_alpha, sigma_eps


def _log_prior_global(beta, sigma_alpha, sigma_eps, prior: PriorSpec,
                      beta_mean_cov=None, include_noise=True) -> np.ndarray:
    if beta_mean_cov is not None:
        mean, cov = beta_mean_cov
        diff = beta - mean
        chol = np.linalg.cholesky(cov)
        white = np.linalg.solve(chol, diff.T).T
        quad = (white ** 2).sum(axis=1)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        lp = -0.5 * (beta.shape[1] * _LOG_2PI + logdet + quad)
    else:
        lp = (-0.5 * _LOG_2PI - np.log(prior.tau_beta)
              - 0.5 * ((beta - prior.nu_beta) / prior.tau_beta) ** 2).sum(axis=1)
    if sigma_alpha.shape[1]:
        lp = lp + log_half_normal(sigma_alpha, prior.tau_sigma).sum(axis=1)
    if include_noise:
        lp = lp + log_half_normal(sigma_eps, prior.tau_eps)
    return lp


def conditional_log_likelihood(ds: HierDataset, gp: GlobalParams, lp: LocalParams,
                               prior: PriorSpec | None = None,
                               beta_mean_cov=None) -> float:
    """Gaussian log-likelihood of the outcomes given one parameter draw,
    conditional on the random effects; adds the joint log-prior terms
    (random effects given their std devs, plus the global priors) when a
    prior is supplied."""
    if gp.sigma_eps <= 0:
        raise ConfigError("noise std dev draw must be positive")
    if ds.q and np.any(gp.sigma_alpha <= 0) and prior is not None:
        raise ConfigError("random-effect std dev draws must be positive")
    ll = float(_gaussian_loglik(ds, gp.beta[None], lp.alpha[None] if ds.q else np.zeros((1, ds.m, 0)),
                                np.array([gp.sigma_eps]))[0])
    if prior is None:
        return ll
    if ds.q:
        lpa = (-0.5 * _LOG_2PI - np.log(gp.sigma_alpha)
               - 0.5 * (lp.alpha / gp.sigma_alpha) ** 2).sum()
        ll += float(lpa)
    ll += float(_log_prior_global(gp.beta[None], gp.sigma_alpha[None],
                                  np.array([gp.sigma_eps]), prior, beta_mean_cov)[0])
    return ll


def marginal_log_likelihood(ds: HierDataset, gp: GlobalParams,
                            prior: PriorSpec | None = None,
                            beta_mean_cov=None, jitter: float = 1e-8) -> float:
    """Log-likelihood with the random effects integrated out: per group,
    y_i ~ N(X_i beta, Z_i diag(sigma_alpha^2) Z_i' + sigma_eps^2 I). Adds
    the global log-priors when a prior is supplied."""
    total = 0.0
    for i in range(ds.m):
        rows = ds.mask[i]
        X_i = ds.X[i][rows]
        y_i = ds.y[i][rows]
        n_i = X_i.shape[0]
        cov = gp.sigma_eps ** 2 * np.eye(n_i)
        if ds.q:
            Zq = ds.Z[i][rows][:, :ds.q]
            cov = cov + (Zq * gp.sigma_alpha ** 2) @ Zq.T
        resid = y_i - X_i @ gp.beta
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            try:
                chol = np.linalg.cholesky(cov + jitter * np.eye(n_i))
            except np.linalg.LinAlgError:
                raise NumericError(f"group {i}: marginal covariance not positive definite")
        white = np.linalg.solve(chol, resid)
        total += -0.5 * (n_i * _LOG_2PI + (white ** 2).sum()) - np.log(np.diag(chol)).sum()
    if prior is not None:
        total += float(_log_prior_global(gp.beta[None], gp.sigma_alpha[None],
                                         np.array([gp.sigma_eps]), prior, beta_mean_cov)[0])
    return float(total)


# ---------------------------------------------------------------------------
# importance sampling


def importance_weights(log_p: np.ndarray, log_q: np.ndarray,
                       clip_percentile: float = 98.0) -> np.ndarray:
    """Self-normalized weights: log ratio, percentile clip, exponentiate
    after max subtraction, normalize to mean one."""
    log_p = np.asarray(log_p, dtype=np.float64)
    log_q = np.asarray(log_q, dtype=np.float64)
    log_w = log_p - log_q
    good = np.isfinite(log_w)
    if not good.any():
        log.warning("all importance weights degenerate, falling back to uniform")
        return np.ones(log_w.shape[0])
    if not good.all():
        log_w = np.where(good, log_w, -np.inf)
    cap = np.percentile(log_w[good], clip_percentile)
    log_w = np.minimum(log_w, cap)
    w = np.exp(log_w - log_w.max())
    mean = w.mean()
    if mean <= 0 or not np.isfinite(mean):
        log.warning("importance weights collapsed to zero, falling back to uniform")
        return np.ones(log_w.shape[0])
    return w / mean


def alternating_refine(ds: HierDataset, prior: PriorSpec, draws: PosteriorDraws,
                       rounds: int = 3, likelihood: str = "conditional",
                       known_sigma_eps: float | None = None,
                       beta_mean_cov=None) -> PosteriorDraws:
    """Alternating importance reweighting of local and global draws,
    starting with the locals; deterministic given the draws.

    `ds` and `prior` must live in the same (standardized) space as the
    draws. Pass beta_mean_cov = (mean, cov) for the exact pushforward
    fixed-effect prior; otherwise the independent-normal form of `prior`
    is used. The conditional likelihood plugs in posterior means of the
    other level; the marginal variant integrates the random effects out
    for the global level instead.
    """
    if likelihood not in ("conditional", "marginal"):
        raise ConfigError(f"unknown likelihood kind {likelihood!r}")
    k = draws.k
    d, q = draws.d, draws.q
    beta, sigma_alpha, sigma_eps = _split_global(
        draws.global_std, d, q, draws.infer_noise, known_sigma_eps)

    w_global = np.ones(k)
    w_local = np.ones((k, draws.m)) if q else None

    for _ in range(max(rounds, 0)):
        if q:
            # local step: plug in current global posterior means
            gp_bar_beta = (beta * w_global[:, None]).sum(axis=0) / w_global.sum()
            gp_bar_sig = (sigma_alpha * w_global[:, None]).sum(axis=0) / w_global.sum()
            gp_bar_eps = float((sigma_eps * w_global).sum() / w_global.sum())
            mean_fixed = np.einsum("mnd,d->mn", ds.X, gp_bar_beta)
            for i in range(draws.m):
                rows = ds.mask[i]
                Zq = ds.Z[i][rows][:, :q]
                resid0 = ds.y[i][rows] - mean_fixed[i][rows]
                a_i = draws.local_std[:, i, :]                    # (k, q)
                resid = resid0[None] - a_i @ Zq.T                  # (k, n_i)
                n_i = float(rows.sum())
                ll = -0.5 * (n_i * _LOG_2PI + n_i * np.log(gp_bar_eps ** 2)
                             + (resid ** 2).sum(axis=1) / gp_bar_eps ** 2)
                lp_a = (-0.5 * _LOG_2PI - np.log(gp_bar_sig)
                        - 0.5 * (a_i / gp_bar_sig) ** 2).sum(axis=1)
                w_local[:, i] = importance_weights(ll + lp_a, draws.log_q_local[:, i])
            alpha_bar = np.einsum("kmq,km->mq", draws.local_std, w_local) / w_local.sum(axis=0)[:, None]
        else:
            alpha_bar = np.zeros((ds.m, 0))

        # global step: plug in the local posterior means
        if likelihood == "conditional":
            ll = _gaussian_loglik(ds, beta, alpha_bar, sigma_eps)
            if q:
                ll = ll + (-0.5 * _LOG_2PI - np.log(sigma_alpha)
                           - 0.5 * (alpha_bar.T[None] / sigma_alpha[:, :, None]) ** 2
                           ).sum(axis=(1, 2))
        else:
            ll = np.array([
                marginal_log_likelihood(ds, GlobalParams(beta[j], sigma_alpha[j], sigma_eps[j]))
                for j in range(k)])
        log_num = ll + _log_prior_global(beta, sigma_alpha, sigma_eps, prior,
                                         beta_mean_cov, include_noise=draws.infer_noise)
        w_global = importance_weights(log_num, draws.log_q_global)

    return PosteriorDraws(
        global_std=draws.global_std, log_q_global=draws.log_q_global,
        d=d, q=q, infer_noise=draws.infer_noise, rec=draws.rec,
        local_std=draws.local_std, log_q_local=draws.log_q_local,
        weights=w_global, local_weights=w_local, dataset_id=draws.dataset_id)


# ---------------------------------------------------------------------------
# conformal calibration


@dataclass
class ConformalTable:
    """Additive border adjustments (standardized units) per parameter role
    and per alpha."""

    alphas: tuple[float, ...]
    adjustments: dict[str, list[float]]
    checkpoint_id: str = ""
    n_calibration: int = 0
    low_confidence: bool = False

    def adjustment(self, role: str, alpha: float) -> float:
        if role not in self.adjustments:
            raise ConfigError(f"no calibration for role {role!r}")
        alphas = np.asarray(self.alphas)
        exact = np.isclose(alphas, alpha)
        if exact.any():
            idx = int(np.argmax(exact))
        else:
            idx = int(np.argmin(np.abs(alphas - alpha)))
            log.warning("alpha %.3g not calibrated, using nearest %.3g", alpha, self.alphas[idx])
        return self.adjustments[role][idx]

    def to_json(self) -> dict:
        return {"alphas": list(self.alphas),
                "adjustments": self.adjustments,
                "checkpoint_id": self.checkpoint_id,
                "n_calibration": self.n_calibration,
                "low_confidence": self.low_confidence}

    @classmethod
    def from_json(cls, obj: dict) -> "ConformalTable":
        return cls(tuple(obj["alphas"]), {k: list(v) for k, v in obj["adjustments"].items()},
                   obj.get("checkpoint_id", ""), int(obj.get("n_calibration", 0)),
                   bool(obj.get("low_confidence", False)))


def conformal_scores(draws: PosteriorDraws, gp_true_std: GlobalParams,
                     lp_true_std: LocalParams, alpha: float) -> dict[str, np.ndarray]:
    """Signed distance from each true standardized parameter to the nearest
    border of its proposed (1 - alpha) interval: positive outside (needs
    widening), negative inside."""
    roles = component_roles(draws.d, draws.q, draws.infer_noise)
    truth = np.concatenate([
        gp_true_std.beta,
        gp_true_std.sigma_alpha,
        [gp_true_std.sigma_eps] if draws.infer_noise else [],
    ])
    out: dict[str, list[float]] = {r: [] for r in ROLES}
    for j, role in enumerate(roles):
        lo, hi = draws.global_interval_std(j, alpha)
        out[role].append(max(lo - truth[j], truth[j] - hi))
    if draws.q and draws.local_std is not None:
        for i in range(min(draws.m, lp_true_std.alpha.shape[0])):
            for j in range(draws.q):
                lo, hi = draws.local_interval_std(i, j, alpha)
                t = lp_true_std.alpha[i, j]
                out["random"].append(max(lo - t, t - hi))
    return {r: np.asarray(v) for r, v in out.items() if v}


def build_conformal_table(score_lists: dict[str, list[list[float]]],
                          alphas: tuple[float, ...],
                          n_calibration: int,
                          checkpoint_id: str = "") -> ConformalTable:
    """score_lists: role -> per-alpha flat score list."""
    adjustments: dict[str, list[float]] = {}
    for role, per_alpha in score_lists.items():
        adjustments[role] = []
        for scores, alpha in zip(per_alpha, alphas):
            s = np.sort(np.asarray(scores, dtype=np.float64))
            if s.size == 0:
                adjustments[role].append(0.0)
                continue
            # conformal (n+1)-adjusted quantile, rounded up
            rank = math.ceil((s.size + 1) * (1.0 - alpha))
            rank = min(max(rank, 1), s.size)
            adjustments[role].append(float(s[rank - 1]))
    low = n_calibration < 100
    if low:
        log.warning("only %d calibration sets; conformal table marked low-confidence",
                    n_calibration)
    return ConformalTable(tuple(alphas), adjustments, checkpoint_id,
                          n_calibration, low)


def calibrate(model, datasets: list[HierDataset], k: int, seed: int,
              alphas: tuple[float, ...] = ALPHA_GRID, refine: str = "none",
              checkpoint_id: str = "") -> ConformalTable:
    """Run inference on every calibration dataset and build the adjustment
    table. Datasets must carry their generating truth and be disjoint from
    training data."""
    from .seeding import substream
    from .standardize import standardize_params

    score_lists: dict[str, list[list[float]]] = {r: [[] for _ in alphas] for r in ROLES}
    for idx, ds in enumerate(datasets):
        if ds.truth is None:
            raise ConfigError("calibration datasets need recorded truth")
        draws = model.posterior(ds, k, substream(seed, "calibrate", idx))
        if refine == "is":
            from .standardize import standardize_data, standardize_prior
            ds_s, rec = standardize_data(ds)
            draws = alternating_refine(ds_s, standardize_prior(ds.truth.prior, rec), draws)
        gp_s, lp_s = standardize_params(ds.truth.global_params, ds.truth.local_params,
                                        draws.rec)
        for a_idx, alpha in enumerate(alphas):
            scores = conformal_scores(draws, gp_s, lp_s, alpha)
            for role, vals in scores.items():
                score_lists[role][a_idx].extend(vals.tolist())
    score_lists = {r: v for r, v in score_lists.items() if any(len(x) for x in v)}
    return build_conformal_table(score_lists, alphas, len(datasets), checkpoint_id)


def apply_calibration(draws: PosteriorDraws, table: ConformalTable | None,
                      alpha: float) -> dict:
    """Interval borders per parameter, in standardized units, widened or
    narrowed by the table entry (zero table means the raw weighted
    empirical quantile interval)."""
    roles = component_roles(draws.d, draws.q, draws.infer_noise)
    out_global = []
    for j, role in enumerate(roles):
        adj = table.adjustment(role, alpha) if table is not None else 0.0
        out_global.append(draws.global_interval_std(j, alpha, adjust=adj))
    out_local = None
    if draws.q and draws.local_std is not None:
        adj = table.adjustment("random", alpha) if table is not None else 0.0
        out_local = [[draws.local_interval_std(i, j, alpha, adjust=adj)
                      for j in range(draws.q)] for i in range(draws.m)]
    return {"alpha": alpha, "global": out_global, "local": out_local}
