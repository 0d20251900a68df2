"""Pytest configuration and fixtures."""

from hypothesis import settings

# Compression examples run well past the default per-example deadline
settings.register_profile("lagkv", deadline=None, max_examples=50)
settings.load_profile("lagkv")
