"""Amortized Bayesian inference for linear mixed-effects regression.

Simulate hierarchical datasets with sampled priors, train a
summary-network + conditional coupling-flow posterior estimator on them,
and refine/evaluate the resulting posteriors with importance sampling and
conformal calibration.
"""

__version__ = "0.1.0"
