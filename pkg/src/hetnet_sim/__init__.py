"""Joint base-station clustering and beamformer design for multicell HetNets."""

from .network import ChannelSet, NetworkConfig, Topology, generate_channels, generate_topology, snr_of
from .signals import UtilityModel
from .swmmse import SwmmseParams, SwmmseResult, extract_clusters, swmmse

__all__ = [
    "ChannelSet", "NetworkConfig", "Topology", "generate_channels", "generate_topology", "snr_of",
    "UtilityModel", "SwmmseParams", "SwmmseResult", "extract_clusters", "swmmse",
]
