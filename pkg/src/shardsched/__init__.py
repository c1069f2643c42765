"""Transaction scheduling for sharded ledgers under adversarial injection."""
from .adversary import (AdversaryParams, InjectionTrace, check_admissible, theorem1_adversary,
                        token_bucket_generator)
from .bds import BasicDistributedScheduler, bds_check_stability_invariants, bds_epoch_length_bound
from .coloring import Coloring, greedy_color
from .config import ConfigError, RunConfig, load_config
from .engine import MetricsTrace, detect_growth, run, summarize
from .fds import EpochClock, FullyDistributedScheduler, Height, fds_check_stability_invariants
from .model import (ConflictGraph, Ledger, SubTransaction, Transaction, build_conflict_graph,
                    ledger_append, split)
from .topology import (ClusterHierarchy, Topology, home_cluster, line_cluster_hierarchy,
                       line_topology, uniform_topology)

__all__ = [name for name in dir() if not name.startswith("_")]
