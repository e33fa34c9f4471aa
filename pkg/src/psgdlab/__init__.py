"""Desk-scale laboratory for data-parallel SGD training strategies.

The package pairs protocol state machines for five distributed training
strategies (synchronous/asynchronous parameter server, synchronous and
asynchronous decentralized rings, and a hierarchical ring hybrid) with two
execution backends: a deterministic virtual-time simulator driven by a
parametric cost model, and a real threaded runtime for small differentiable
problems.
"""

__version__ = "0.1.0"

from psgdlab.vectors import ParamVector, axpy, l2_distance, mean_of

__all__ = ["ParamVector", "axpy", "l2_distance", "mean_of", "__version__"]
