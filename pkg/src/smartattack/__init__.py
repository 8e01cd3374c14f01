"""Perceptual adversarial attacks on skeletal-motion action recognizers."""

__version__ = "0.1.0"
MOTION_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
REPORT_SCHEMA_VERSION = 1
