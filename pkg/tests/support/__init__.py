"""Support code for the lagkv tests."""
