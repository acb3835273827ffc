"""Bayesian structure learning over cyclic graphs of dynamical systems.

A sequential flow-network sampler builds candidate sparsity graphs one
variable at a time (all incoming edges of the chosen variable in
parallel), trained with a detailed-balance objective against a reward that
measures how well a graph-masked dynamics model explains observed
(state, derivative) pairs.
"""

__version__ = "0.1.0"

from . import autodiff, dynamics, harness, metrics, policy, sampler, synth

__all__ = ["autodiff", "dynamics", "harness", "metrics", "policy",
           "sampler", "synth", "__version__"]
