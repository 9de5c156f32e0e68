"""Error-state model predictive control on SE(3) for surface vessels."""
from .errmpc import ErrorStateMPC, HorizonConfig, MpcWeights
from .hydro import VesselParams, load_vessel
from .nmpc import NmpcController

__all__ = ["ErrorStateMPC", "HorizonConfig", "MpcWeights", "NmpcController",
           "VesselParams", "load_vessel"]
__version__ = "0.1.0"
