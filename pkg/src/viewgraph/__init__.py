"""Viewpoint-graph evaluation of research ideas.

Ideas are decomposed into atomic viewpoints, linked into a weighted
similarity graph, and scored either by training-free label propagation
or by a small trainable weighted GNN with novelty-aware negatives.
"""

__version__ = "0.1.0"
