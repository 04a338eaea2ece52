"""
Duet interaction graph package.

This package infers which joints of two dancers drive each other from 3D
keypoint sequences, using a variational edge-type encoder and a graph
recurrent decoder. Charged-particle simulations with known interaction graphs
provide a ground-truth benchmark for the same model.
"""

__version__ = "0.1.0"
