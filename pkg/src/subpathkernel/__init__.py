"""Subpath kernel for unordered trees with numeric node features."""

from .atomic import KernelConfig, atomic, chi2_distance, gaussian_distance, rbf
from .kernel import (
    GramMatrix,
    gram_matrix,
    rooted_kernel,
    subpath_kernel,
    subpath_kernel_oracle,
)
from .tree import Dataset, FeatureSpec, Node, Tree, parse_dataset, validate_tree

__version__ = "0.1.0"
