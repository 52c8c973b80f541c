"""Phonetically confusable evaluation sets and rankers for code-switched language modeling."""

__version__ = "0.1.0"
