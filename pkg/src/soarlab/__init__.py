"""Adversarial robustness via second-order regularization, on a numpy autodiff core."""

__version__ = "0.1.0"
