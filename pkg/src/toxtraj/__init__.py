"""toxtraj: discourse-trajectory analysis pipeline.

Recursive density-based topic discovery with coherence-gated merging,
toxicity-trend user grouping with matched references, trajectory
interpolation onto fixed grids, and permutational MANOVA group comparison.
"""

__version__ = "0.1.0"
