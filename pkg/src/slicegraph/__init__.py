"""Process atlases of sampled reasoning traces from sparse activation-key similarity graphs."""
from .atlas import Block, BlockAtlas, RoleThresholds, build_atlas, decompose
from .cache import (AggregationConfig, CellCache, RunRecord, SliceKeySet, read_cache, read_json,
                    write_cache)
from .dynamics import TypedKernelSet, analyze_dynamics, estimate_kernels, family_tv
from .estimators import (ProcessFamilyDetector, RewardFieldEstimator, SliceGraphAtlas,
                         TypedKernelEstimator)
from .exceptions import CacheFormatError, DegenerateCellError, SliceGraphError, ValidationError
from .families import FamilyPartition, detect_families, isomer_rate, isomer_stats
from .graph import SliceGraph, build_graph
from .nulls import NullSpec
from .pipeline import PipelineParams, analyze_cell, run_corpus, write_report
from .reward import HighValueCore, RewardField, field_cores, reward_field
from .stats import bh_fdr, clustered_bootstrap, summarize_null
from .synth import GroundTruth, PlantSpec, generate_cell, score_recovery

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig", "Block", "BlockAtlas", "CacheFormatError", "CellCache",
    "DegenerateCellError", "FamilyPartition", "GroundTruth", "HighValueCore", "NullSpec",
    "PipelineParams", "PlantSpec", "ProcessFamilyDetector", "RewardField", "RewardFieldEstimator",
    "RoleThresholds", "RunRecord", "SliceGraph", "SliceGraphAtlas", "SliceGraphError",
    "SliceKeySet", "TypedKernelEstimator", "TypedKernelSet", "ValidationError", "analyze_cell",
    "analyze_dynamics", "bh_fdr", "build_atlas", "build_graph", "clustered_bootstrap", "decompose",
    "detect_families", "estimate_kernels", "family_tv", "field_cores", "generate_cell",
    "isomer_rate", "isomer_stats", "read_cache", "read_json", "reward_field", "run_corpus",
    "score_recovery", "summarize_null", "write_cache", "write_report",
]
