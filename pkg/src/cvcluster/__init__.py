"""Streaming Gaussian simulator and verifier for a time-multiplexed 2-D CV cluster state."""

__version__ = "0.1.0"
