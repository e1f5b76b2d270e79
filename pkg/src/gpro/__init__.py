"""PageRank optimization with free edges, solved by PageRank Iteration."""
from .hitting import ImproperPolicyError, hitting_times, pagerank
from .model import (
    Edge,
    GproInstance,
    Policy,
    SupportGraph,
    default_policy,
    load_instance,
    policy_count,
    save_instance,
    split_target,
    validate,
)
from .oracle import brute_force_optimum
from .pri import PriTrace, solve

__all__ = [
    "Edge",
    "GproInstance",
    "ImproperPolicyError",
    "Policy",
    "PriTrace",
    "SupportGraph",
    "brute_force_optimum",
    "default_policy",
    "hitting_times",
    "load_instance",
    "pagerank",
    "policy_count",
    "save_instance",
    "solve",
    "split_target",
    "validate",
]
