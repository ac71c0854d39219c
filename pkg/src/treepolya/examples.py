"""Prebuilt worked-example models used in the documentation and tests."""

from __future__ import annotations

from .model import TreePolyaModel
from .polya import NegativeBinomial, SplitSpec, SumLaw
from .tree import PartitionTree

__all__ = ["ten_leaf_example", "TEN_LEAF_NESTED"]

# A 10-variable tree mixing multinomial and Dirichlet-multinomial splits
# at different depths: {1,2} and {3} split off at the root from the
# block {4,...,10}, which splits into {4,5}, {6,7}, and {8,9,10}, with
# {9,10} nested one level deeper.
TEN_LEAF_NESTED = [[1, 2], 3, [[4, 5], [6, 7], [8, [9, 10]]]]


def ten_leaf_example(alpha: float = 10.0, p: float = 0.95,
                     theta_67: tuple = (0.8, 1.0),
                     root_weights: tuple = (0.3, 0.1, 0.6),
                     ) -> TreePolyaModel:
    """Negative-binomial-totaled model on the 10-leaf tree.

    The keyword arguments expose the knobs varied in the worked
    examples: the sum-law parameters, the root split weights, and the
    Dirichlet weights of the {6,7} split whose balance drives the sign
    of the correlation between leaves 6 and 9.
    """
    tree = PartitionTree.from_nested(TEN_LEAF_NESTED)

    def node(*labels):
        return tree.node_by_subset(tuple(sorted(labels)))

    splits = {
        tree.ROOT: SplitSpec(0, root_weights),
        node(1, 2): SplitSpec(1, (1.5, 1.5)),
        node(4, 5, 6, 7, 8, 9, 10): SplitSpec(1, (3.0, 3.5, 3.5)),
        node(4, 5): SplitSpec(0, (0.5, 0.5)),
        node(6, 7): SplitSpec(1, theta_67),
        node(8, 9, 10): SplitSpec(1, (1.0, 2.5)),
        node(9, 10): SplitSpec(0, (0.3, 0.7)),
    }
    return TreePolyaModel(tree, splits, NegativeBinomial(alpha, p))
