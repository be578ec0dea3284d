"""Graph-based multimodal emotion recognition in conversation, on a small numpy autodiff core."""

__version__ = "0.1.0"
