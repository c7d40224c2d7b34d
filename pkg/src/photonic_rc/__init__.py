"""Simulation of a quantized photonic reservoir computer for MNIST digit classification.

Modules, bottom-up: :mod:`numerics` (quantizers, random weights, spectral
radius), :mod:`dataset` (IDX parsing and splits), :mod:`features` (image
front ends), :mod:`reservoir` (network dynamics), :mod:`readout` (ridge
training and decisions) and :mod:`harness` (experiments and CLI support).
"""

__version__ = "0.1.0"
