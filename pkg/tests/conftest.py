"""Shared test configuration: turn on engine runtime assertions for every test."""

import pytest

from asap_pool.engine import ops


@pytest.fixture(autouse=True)
def _engine_debug_checks():
    previous = ops.DEBUG_CHECKS
    ops.DEBUG_CHECKS = True
    yield
    ops.DEBUG_CHECKS = previous
