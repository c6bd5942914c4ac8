#!/usr/bin/env python3
"""
Multibeam Precoding Lab

Linear precoding for multibeam satellite forward links: channel generation, ZF,
MMSE, per-antenna power constrained MMSE and optimal linear precoders, link
metrics, a symbol-level superframe CSI loop and an experiment runner.
"""

__version__ = "1.0.0"
