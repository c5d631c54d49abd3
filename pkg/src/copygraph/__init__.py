"""Node-copying random graphs: sampling, theory checks, and applications to
node classification, adversarial defense and recommendation."""

from copygraph.copying import (
    CopyingDistribution,
    apply_copy,
    build_jaccard_user,
    build_knn_embedding,
    build_label_uniform,
    build_order_statistic,
    copy_graph,
    sample_graph,
)
from copygraph.graph import BipartiteGraph, Graph, NodeLabels
from copygraph.rng import derive_rng

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph",
    "CopyingDistribution",
    "Graph",
    "NodeLabels",
    "apply_copy",
    "build_jaccard_user",
    "build_knn_embedding",
    "build_label_uniform",
    "build_order_statistic",
    "copy_graph",
    "derive_rng",
    "sample_graph",
]
