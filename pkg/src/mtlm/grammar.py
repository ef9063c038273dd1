"""Seeded sentences from a small finite-state grammar, used as a toy training corpus."""

from __future__ import annotations

import numpy as np

_LEXICON = {
    "DET": ["the", "a", "my"],
    "ADJ": ["red", "big", "old"],
    "NOUN": ["cat", "dog", "bird", "fox"],
    "VERB": ["sees", "likes", "hears"],
    "CONJ": ["and"],
}

# state -> [(probability, category, next_state)]; None ends the sentence
_TRANSITIONS = {
    "S": [(1.0, "DET", "NP")],
    "NP": [(0.35, "ADJ", "N"), (0.65, "NOUN", "VP")],
    "N": [(1.0, "NOUN", "VP")],
    "VP": [(1.0, "VERB", "O")],
    "O": [(1.0, "DET", "ON")],
    "ON": [(0.35, "ADJ", "ONN"), (0.65, "NOUN", "END")],
    "ONN": [(1.0, "NOUN", "END")],
    "END": [(0.75, None, None), (0.25, "CONJ", "S")],
}


def sentence(rng: np.random.Generator, max_words: int = 24) -> str:
    words: list[str] = []
    state = "S"
    while state is not None:
        arcs = _TRANSITIONS[state]
        if state == "END" and len(words) + 6 > max_words:
            break
        k = rng.choice(len(arcs), p=[a[0] for a in arcs])
        _, cat, state = arcs[k]
        if cat is None:
            break
        choices = _LEXICON[cat]
        words.append(choices[int(rng.integers(len(choices)))])
    return " ".join(words)


def synthetic_corpus(n_sentences: int, seed: int = 0, max_words: int = 24) -> list[str]:
    rng = np.random.default_rng(seed)
    return [sentence(rng, max_words) for _ in range(n_sentences)]
