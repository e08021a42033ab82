"""Online energy-efficient control of a wireless-powered mobile-edge-computing system."""
from .model import (Action, ChannelParams, ChannelState, InvalidParameterError, SystemParams, SystemState, WdParams,
                    default_params, drift_bound)
from .leese import BcdConfig, BisectionConfig, battery_threshold, decide
from .engine import Policy, RunConfig, RunMetrics, run, sweep

__version__ = "0.1.0"

__all__ = [
    "Action", "ChannelParams", "ChannelState", "InvalidParameterError", "SystemParams", "SystemState", "WdParams",
    "default_params", "drift_bound", "BcdConfig", "BisectionConfig", "battery_threshold", "decide", "Policy",
    "RunConfig", "RunMetrics", "run", "sweep", "__version__",
]
