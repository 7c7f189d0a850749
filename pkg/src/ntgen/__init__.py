"""Synthetic network traffic generation from packet captures.

Pipeline: read a capture, assemble directional flows, extract per-flow
features, cluster flows into activities, fit a sequence model over activity
ids, generate new traffic, and compare it with the original.
"""

from __future__ import annotations

__version__ = "0.1.0"
