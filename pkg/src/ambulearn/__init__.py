"""Learning ambulance dispatching and redeployment policies from full-information schedules."""
from .core import Location, Request, RequestKind, ScenarioConfig, travel_time
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "Location", "Request", "RequestKind", "ScenarioConfig", "travel_time"]
