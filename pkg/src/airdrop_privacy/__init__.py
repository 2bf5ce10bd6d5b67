"""Address clustering and cross-chain privacy analysis for airdropped UTXO chains."""

__version__ = "0.1.0"

from .chain_model import (ChainFormatError, ChainSnapshot, OutputRecord, TxRecord,
                          parse_chain_file, shared_address_counts)
from .clustering import Partition, cluster_stream, size_histogram
from .combination import cluster_diff, combine, improvement_hasse, is_improvement
from .crosschain import build_cocluster_graph, impact_report
from .novelty import address_novelty, cluster_novelty, sma
from .synthgen import GroundTruth, Scenario, generate

__all__ = [
    "ChainFormatError", "ChainSnapshot", "OutputRecord", "TxRecord", "parse_chain_file",
    "shared_address_counts", "Partition", "cluster_stream", "size_histogram", "cluster_diff",
    "combine", "improvement_hasse", "is_improvement", "build_cocluster_graph", "impact_report",
    "address_novelty", "cluster_novelty", "sma", "GroundTruth", "Scenario", "generate",
]
