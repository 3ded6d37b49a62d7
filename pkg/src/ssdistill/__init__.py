"""Self-supervised dataset distillation with image/representation bases.

The package is organised bottom-up: :mod:`tensor` (reverse-mode autodiff),
:mod:`nn` and :mod:`optim` (models and optimisers), :mod:`spectral` (PCA,
k-means), :mod:`augment`, :mod:`parameterization`, :mod:`teacher`,
:mod:`distill`, :mod:`approx`, :mod:`evaluation`, :mod:`store` and the
:mod:`pipeline`/:mod:`cli` layers on top.
"""

__version__ = "0.1.0"
