"""biasfst - LLR-pruned n-gram boosting for shallow-fusion decoding."""

__version__ = "0.1.0"
