"""Desk-scale 2D manipulation lab: hierarchical demonstration collection
and chunking behavior cloning."""

from . import dataset, evaluator, expert, policy, sim, spaces, trainer

__all__ = ["dataset", "evaluator", "expert", "policy", "sim", "spaces",
           "trainer"]
__version__ = "0.1.0"
