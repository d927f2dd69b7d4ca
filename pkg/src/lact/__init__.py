"""Large-chunk test-time training layers, update rules and verification tooling."""

__version__ = "0.1.0"
