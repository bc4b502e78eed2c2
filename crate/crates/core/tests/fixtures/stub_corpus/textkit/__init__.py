"""Small text helpers."""

from .words import count_words, split_words
from .slug import slugify

__all__ = ["count_words", "split_words", "slugify"]
