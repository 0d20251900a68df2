"""KV cache data structures, partition geometry, and the KVD format."""
