"""Federated averaging as a discrete stochastic process and as its
continuous-time diffusion limit.

Subpackages by concern: ``model`` (loss landscapes and noise), ``discrete``
(the round-based simulator), ``sde`` (moment estimation and Euler-Maruyama
integration), ``quadratic`` (closed forms for scalar quadratic clients),
``stats`` (normality diagnostics and the random-time sampler), ``bounds``
(rate-bound evaluators and comparisons), ``cli`` (the batch runner).
"""

__version__ = "0.1.0"
