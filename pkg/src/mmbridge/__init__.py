"""Multi-modality associative bridging with key-value memories."""
__version__ = "0.1.0"
