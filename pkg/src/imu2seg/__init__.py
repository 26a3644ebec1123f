"""imu2seg: joint estimation of segment motion and IMU-to-segment calibration."""

__version__ = "0.1.0"
