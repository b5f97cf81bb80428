"""Tokenization helpers shared by the mock backends and the corpus generator."""
from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Function words plus the question scaffolding the mock models ignore.
STOPWORDS = frozenset(
    """
    a an the and or but if then than so of in on at to for from by with without into onto
    over under about as near is are was were be been being am do does did done doing
    has have had having can could will would shall should may might must
    i me my mine we us our you your he him his she her it its they them their
    this that these those there here what which who whom whose when where why how
    any some someone somebody anyone anything something all each every no not yes
    many much times time often number count video clip show shows shown happen happened happens
    order first next later finally
    """.split()
)


def tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def content_tokens(text: str) -> list[str]:
    """Lower-cased alphanumeric tokens with stopwords removed."""
    return [t for t in tokens(text) if t not in STOPWORDS]


def keyword_phrases(text: str) -> list[str]:
    """Maximal runs of content words, split at stopwords and punctuation.

    This is the candidate-phrase step of RAKE: ``"What did I do with the
    dusty cabinet?"`` yields ``["dusty cabinet"]``.
    """
    phrases: list[str] = []
    for chunk in re.split(r"[^A-Za-z0-9\s]+", text):
        current: list[str] = []
        for tok in tokens(chunk):
            if tok in STOPWORDS:
                if current:
                    phrases.append(" ".join(current))
                current = []
            else:
                current.append(tok)
        if current:
            phrases.append(" ".join(current))
    out: list[str] = []
    for p in phrases:
        if p not in out:
            out.append(p)
    return out
