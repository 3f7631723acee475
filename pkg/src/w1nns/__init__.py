"""Approximate nearest neighbour search under the Wasserstein-1 distance.

Quadtree embeddings, the Flowtree estimator, classical baselines, an exact
transport solver and prefetch-and-prune pipelines built from them.
"""

__version__ = "0.1.0"

from .core import Dataset, Distribution, GroundSet, load_distributions, load_ground_set
from .exact import exact_w1, transport
from .flowtree import Flow, flowtree_estimate, tree_flow
from .quadtree import QuadtreeIndex, build_quadtree, quadtree_distance
from .evaluation import Pipeline, run_pipeline, tune_pipeline

__all__ = [
    "Dataset", "Distribution", "GroundSet", "load_distributions", "load_ground_set",
    "exact_w1", "transport", "Flow", "flowtree_estimate", "tree_flow",
    "QuadtreeIndex", "build_quadtree", "quadtree_distance",
    "Pipeline", "run_pipeline", "tune_pipeline",
]
