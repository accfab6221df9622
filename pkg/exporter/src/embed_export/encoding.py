"""Deterministic contextual token encoder.

The built-in encoder family derives a base vector for every token from a
keyed hash of its text, then mixes neighbouring base vectors and a position
vector into each hidden state.  The same token therefore gets a different
vector in different contexts, but the whole mapping is a pure function of
(encoder name, token list): two exports of one corpus are bit-identical,
which is what the downstream container format promises.

Heavier pretrained encoders can replace this by implementing the same
two-method surface (`d`, `encode`).
"""

import hashlib
import re

import numpy as np

_WORD = re.compile(r"[a-z0-9']+")
_NAME = re.compile(r"^hashed(\d+)-v1$")

# mixing weights: self, left neighbour, right neighbour, position
_W_SELF = 0.5
_W_NEIGHBOR = 0.25
_W_POS = 0.1


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs; apostrophes stay inside words."""
    return _WORD.findall(text.lower())


class HashedEncoder:
    def __init__(self, d: int, version: str):
        if d < 1:
            raise ValueError("encoder width must be >= 1")
        self.d = d
        self.version = version
        self._cache: dict[str, np.ndarray] = {}

    @property
    def name(self) -> str:
        return f"hashed{self.d}-{self.version}"

    def _base(self, word: str) -> np.ndarray:
        vec = self._cache.get(word)
        if vec is None:
            digest = hashlib.blake2b(word.encode("utf-8"),
                                     key=self.name.encode("ascii"),
                                     digest_size=8).digest()
            seed = int.from_bytes(digest, "little")
            vec = np.random.default_rng(seed).standard_normal(self.d)
            self._cache[word] = vec
        return vec

    def encode(self, tokens: list[str]) -> np.ndarray:
        """(T, d) float64 hidden states for a non-empty token list."""
        if not tokens:
            raise ValueError("cannot encode an empty token list")
        base = [self._base(t) for t in tokens]
        rows = []
        for i, b in enumerate(base):
            left = base[i - 1] if i > 0 else b
            right = base[i + 1] if i + 1 < len(base) else b
            pos = self._base(f"<pos:{i}>")
            mixed = _W_SELF * b + _W_NEIGHBOR * (left + right) + _W_POS * pos
            # unit rows keep distances and similarity logits in a range the
            # downstream losses handle without hitting numerical floors
            rows.append(mixed / np.linalg.norm(mixed))
        return np.stack(rows)


def get_encoder(name: str) -> HashedEncoder:
    m = _NAME.match(name)
    if not m:
        raise ValueError(f"unknown encoder {name!r}; supported: hashed<width>-v1 "
                         f"(e.g. hashed64-v1)")
    return HashedEncoder(int(m.group(1)), "v1")
