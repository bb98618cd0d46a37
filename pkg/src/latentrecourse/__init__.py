"""Counterfactual explanations for pre-trained regressors.

The package trains a label-disentangled autoencoder around a frozen
regressor and generates counterfactuals by interpolating the label input of
the decoder while holding the label-irrelevant latent code fixed.
"""

__version__ = "0.1.0"
