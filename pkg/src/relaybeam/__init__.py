"""MMSE transceiver design and link-level simulation for dual-hop
amplify-and-forward MIMO relay cellular networks."""

from .channel import (ChannelSet, NoiseModel, PowerBudget, SystemDims,
                      noise_for_snr, sample_rayleigh, snr_to_noise,
                      uniform_dims)
from .downlink import DownlinkDesign, design_downlink
from .errors import (EmptyAggregateError, InvalidInputError,
                     NumericalFailureError)
from .sdp import SdpProblem, SdpSolution, solve_sdp
from .simulate import AggregateResult, TrialResult, aggregate, run_trial
from .uplink import (UplinkDesign, design_uplink_alternating,
                     design_uplink_covariance)

__version__ = "0.1.0"

__all__ = [
    "AggregateResult", "ChannelSet", "DownlinkDesign", "EmptyAggregateError",
    "InvalidInputError", "NoiseModel", "NumericalFailureError", "PowerBudget",
    "SdpProblem", "SdpSolution", "SystemDims", "TrialResult", "UplinkDesign",
    "aggregate", "design_downlink", "design_uplink_alternating",
    "design_uplink_covariance", "noise_for_snr", "run_trial",
    "sample_rayleigh", "snr_to_noise", "solve_sdp", "uniform_dims",
]
