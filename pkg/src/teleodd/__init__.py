"""Capability-gated teleoperation domain simulator."""

__version__ = "0.1.0"
