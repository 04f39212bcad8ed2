"""Hebbian/k-WTA point-set encoding, set decoding, and latent prediction.

A point-set pipeline for unit-position frames: an unsupervised Hebbian
encoder with distance-based k-winner-takes-all sparsity, a sampling set
decoder trained with a smooth-L1 Chamfer loss, a latent LSTM predictor for
frame sequences, comparison baselines, and analytic compute-cost accounting.
"""

__version__ = "0.1.0"
