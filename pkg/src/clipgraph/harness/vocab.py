"""Word pools for synthetic corpora.

Every word kept here lands in its own mock-embedding bucket, so cosine
between two generated strings depends only on which words they share.
Pools are filtered greedily in a fixed order, which makes the result
identical on every run.
"""
from __future__ import annotations

from functools import lru_cache

from ..backends.mock import MOCK_EMBED_DIM, token_bucket
from ..text import STOPWORDS

_NOUNS = """
kettle ladder bicycle guitar blender toaster umbrella suitcase lantern backpack
notebook compass hammer bucket teapot pillow blanket skillet cabinet drawer
""".split()

_ADJECTIVES = """
crimson amber ivory cobalt olive maroon teal violet scarlet azure
rusty glossy matte dented polished faded striped dotted woven quilted
wooden plastic ceramic metallic leather velvet copper brass silver golden
tiny bulky slender round square oval narrow wide heavy light
vintage modern antique battered shiny dusty muddy spotless chipped scratched
folding portable electric manual digital analog cordless wireless padded insulated
curved angular hollow solid fluffy smooth rough bumpy sticky frosted
tall short chunky sleek rugged delicate sturdy flimsy bright pale
""".split()

_VERBS = """
open close lift drop wash dry fold unfold carry push pull shake
rinse wipe polish paint fill empty stack unstack flip rotate
tighten loosen repair inspect measure weigh sort hang unplug plug
kick throw catch toss squeeze stretch sharpen scrub sweep drag
tilt twist unlock lock seal unseal wrap unwrap
""".split()

_SCENE_WORDS = """
kitchen garage garden patio attic basement workshop balcony hallway studio
office library harbor market rooftop campsite meadow orchard
""".split()

_CHATTER = """
okay alright careful almost nearly perfect great lovely hmm wow
ready steady
""".split()

# scarcest pools are filtered first
POOL_NAMES = ("scene_words", "chatter", "verbs", "nouns", "adjectives")


@lru_cache(maxsize=None)
def collision_free_pools(dim: int = MOCK_EMBED_DIM) -> dict[str, tuple[str, ...]]:
    """Word pools restricted so that no two kept words share a bucket."""
    taken: set[int] = set()
    seen: set[str] = set()
    pools: dict[str, list[str]] = {name: [] for name in POOL_NAMES}
    for name, words in zip(POOL_NAMES, (_SCENE_WORDS, _CHATTER, _VERBS, _NOUNS, _ADJECTIVES)):
        for word in words:
            if word in STOPWORDS or word in seen:
                continue
            seen.add(word)
            bucket = token_bucket(word, dim)
            if bucket in taken:
                continue
            taken.add(bucket)
            pools[name].append(word)
    return {name: tuple(words) for name, words in pools.items()}


def all_words(dim: int = MOCK_EMBED_DIM) -> tuple[str, ...]:
    pools = collision_free_pools(dim)
    return tuple(w for name in POOL_NAMES for w in pools[name])
