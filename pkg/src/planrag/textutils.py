"""Shared text helpers: word splitting, match normalization, token estimates.

One word definition serves every word-count in the package (chunking, gold
chunking, token estimates): a word is a maximal run of non-whitespace.
"""

from __future__ import annotations

import re
import string

_FENCE_RE = re.compile(r"^```[^\n]*\n(.*?)\n?```\s*$", re.DOTALL)
_WS_RE = re.compile(r"\s+")


def word_split(text: str) -> list[str]:
    """Split into maximal runs of non-whitespace, raw surfaces preserved."""
    return text.split()


def index_token(word: str) -> str:
    """Normalize one word for lexical indexing: lowercase, outer punctuation stripped."""
    return word.lower().strip(string.punctuation)


def index_tokens(text: str) -> list[str]:
    """Indexable tokens of a text; words that are pure punctuation vanish."""
    out = []
    for w in word_split(text):
        t = index_token(w)
        if t:
            out.append(t)
    return out


def normalize_for_match(text: str) -> str:
    """Lowercase, collapse whitespace, strip surrounding punctuation.

    Used for containment checks (answer accuracy, gold-chunk hits).
    """
    collapsed = _WS_RE.sub(" ", text.lower()).strip()
    return collapsed.strip(string.punctuation + " ")


def contains_normalized(haystack: str, needle: str) -> bool:
    """True iff the normalized needle occurs inside the normalized haystack."""
    n = normalize_for_match(needle)
    if not n:
        return False
    return n in normalize_for_match(haystack)


def estimate_tokens(text: str) -> int:
    """Approximate token count: whitespace word count x 4/3, rounded up.

    Used whenever a generation service does not report usage, and for all
    context-size accounting, so comparisons stay in one consistent unit.
    """
    n = len(word_split(text))
    return (4 * n + 2) // 3


def strip_code_fences(text: str) -> str:
    """Remove a surrounding markdown code fence, if the text is one fenced block."""
    stripped = text.strip()
    m = _FENCE_RE.match(stripped)
    if m:
        return m.group(1)
    return stripped
