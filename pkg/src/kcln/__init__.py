"""Column networks with knowledge-based gating from preference rules."""

from .experiments import (ExperimentSpec, MetricReport, run_alpha_sweep, run_epoch_curve,
                          run_sample_curve)
from .gating import advice_gradient, compute_gates
from .graph import KnowledgeGraph, build_graph, load_graph, split, subsample
from .masks import AdviceMasks, create_mask, match_rule
from .metrics import auc_pr, micro_f1
from .network import CLNConfig, CLNParams, GateSet, backward, forward
from .rules import RuleSet, load_rules, parse_rules
from .synth import SynthSpec, generate, generate_graph
from .trainer import TrainConfig, TrainHistory, train, train_vanilla

__version__ = "0.1.0"

__all__ = [
    "AdviceMasks", "CLNConfig", "CLNParams", "ExperimentSpec", "GateSet", "KnowledgeGraph",
    "MetricReport", "RuleSet", "SynthSpec", "TrainConfig", "TrainHistory", "advice_gradient",
    "auc_pr", "backward", "build_graph", "compute_gates", "create_mask", "forward", "generate",
    "generate_graph", "load_graph", "load_rules", "match_rule", "micro_f1", "parse_rules",
    "run_alpha_sweep", "run_epoch_curve", "run_sample_curve", "split", "subsample", "train",
    "train_vanilla",
]
