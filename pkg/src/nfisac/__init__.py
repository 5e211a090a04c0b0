"""Near-field RIS-assisted multi-target ISAC: channels, SDR beamforming and AO."""
from .channels import ChannelSet, RisState, build_channel_set
from .geometry import ArrayGeometry, PointEntity, Wave, build_upa
from .metrics import SensingWeights, TransmitDesign, feasibility_report
from .optimizer import AoConfig, AoResult, alternating_optimize
from .scenario import Scenario

__all__ = [
    "AoConfig", "AoResult", "ArrayGeometry", "ChannelSet", "PointEntity", "RisState", "Scenario",
    "SensingWeights", "TransmitDesign", "Wave", "alternating_optimize", "build_channel_set",
    "build_upa", "feasibility_report",
]
__version__ = "0.1.0"
