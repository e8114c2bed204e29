"""Scene flow from rectified stereo video: disparity, optical flow, camera motion and moving-object masks."""
from ._backend import BACKEND, set_threads

__version__ = "0.1.0"

__all__ = ["BACKEND", "set_threads", "__version__"]
