"""Streaming analysis agents for beamline data: NMF, anomaly detection and
spectrum classification behind a tell/report/ask interface."""

__version__ = "0.1.0"
