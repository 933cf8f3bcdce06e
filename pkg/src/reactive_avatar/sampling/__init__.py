"""Rolling KV caches, streaming sessions and the offline reference sampler."""
