"""Neck muscle contraction level (MCL) modeling for head movements.

Post-hoc estimation from head kinematics (MCLNet), pre-hoc forecasting from
start and end poses (TrajectoryNet plus cumulative MCL), discomfort-ordered
scan paths, an EMG processing pipeline and a synthetic biophysical oracle
that stands in for recorded EMG.
"""
from .errors import NeckMclError
from .kinematics import HeadPose, MclSequence, TimedTrajectory

__version__ = "0.1.0"
__all__ = ["HeadPose", "MclSequence", "NeckMclError", "TimedTrajectory", "__version__"]
