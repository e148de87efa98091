"""Competition-aware market-share forecasting.

A library and CLI for predicting the weekly market shares of competing
products: a Poisson generative simulator, a from-scratch feed-forward
weight network trained through a shared normalization layer, simple
baselines, rolling evaluation with partial dependence, and empirical
checks of the model's contraction and concentration conditions.
"""

__version__ = "0.1.0"
