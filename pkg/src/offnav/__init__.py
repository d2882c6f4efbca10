"""Uncertainty-aware off-road navigation testbed.

Learned traversability costs with aleatoric uncertainty and online
adaptation, an ensemble dynamics model with epistemic uncertainty, and a
sampling-based model predictive controller, exercised in a procedural 2.5D
rough-terrain simulator.
"""

__version__ = "0.1.0"
