"""Cardiac-vibration biometrics from chest-worn IMU recordings (SCG accelerometer, GCG gyroscope)."""
from .signals import ACTIVITIES, POSITIONS, SIGNAL_KINDS

__version__ = "0.1.0"
__all__ = ["ACTIVITIES", "POSITIONS", "SIGNAL_KINDS", "__version__"]
