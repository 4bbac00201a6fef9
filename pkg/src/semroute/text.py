"""Shared text normalization.

One normalizer backs both the rule-based entailment mock and the answer
metrics, so "equivalent" and "correct" agree on what counts as the same
string: lowercase, punctuation removed, the articles a/an/the dropped as
whole words, whitespace collapsed.

The retriever deliberately does not use this normalizer; its tokenizer keeps
articles and splits on every non-alphanumeric character instead.
"""

from __future__ import annotations

import re
import string

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def normalize_text(text: str) -> str:
    """Normalize an answer string for comparison.

    Args:
        text: Raw answer text.

    Returns:
        The normalized form; may be empty when the input carries no content
        (for example a string of punctuation).
    """
    lowered = text.lower()
    no_punct = lowered.translate(_PUNCT_TABLE)
    no_articles = _ARTICLE_RE.sub(" ", no_punct)
    return " ".join(no_articles.split())


def normalized_tokens(text: str) -> list[str]:
    """Tokens of the normalized form; empty list for content-free input."""
    return normalize_text(text).split()


def search_tokens(text: str) -> list[str]:
    """Retrieval tokenizer: lowercase, split on every non-alphanumeric run.

    No stemming, no stopword removal; articles are kept.
    """
    return _TOKEN_RE.findall(text.lower())
