#!/usr/bin/env python3
"""
Shared pytest configuration for the Multibeam Precoding Lab tests
"""

import numpy as np
import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo checks that take more than a few seconds")


def well_conditioned_channel(rng, size, users=None, spread=0.3):
    """Diagonally dominant channel 0.5 (I + spread * G / sqrt(N))"""
    users = size if users is None else users
    G = (rng.standard_normal((users, size)) + 1j * rng.standard_normal((users, size))) / np.sqrt(2.0)
    return 0.5 * (np.eye(users, size) + spread * G / np.sqrt(size))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
