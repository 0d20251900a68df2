"""Tests and test support modules."""

# This __init__.py file enables test modules to import support code
# inside tests/
