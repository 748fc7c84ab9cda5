"""Rescale Likert judgments with explanations onto a 0-100 scale and evaluate them."""

__version__ = "0.1.0"
