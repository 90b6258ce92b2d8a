"""Corneal incision training sandbox: voxel eye simulator, PPO+GAIL trainer,
evaluation metrics, and a demonstration-capture session service."""

__version__ = "0.1.0"
