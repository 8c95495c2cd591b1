"""Character-level corpus handling."""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

HELD_OUT_FRACTION = 0.1


def bundled_text():
    return resources.files("sparsescale.trainer").joinpath("data/corpus.txt").read_text(
        encoding="utf-8")


@dataclass(frozen=True)
class Corpus:
    """Lower-cased text split into a training head and a held-out tail.

    The split is by position, so the two token streams never overlap.
    """

    vocab: str
    train: np.ndarray
    held_out: np.ndarray

    @property
    def vocab_size(self):
        return len(self.vocab)

    @classmethod
    def from_text(cls, text, held_out_fraction=HELD_OUT_FRACTION):
        text = text.lower()
        if not 0 < held_out_fraction < 1:
            raise ValueError(f"held_out_fraction must lie in (0, 1), got {held_out_fraction}")
        vocab = "".join(sorted(set(text)))
        if len(vocab) < 2:
            raise ValueError("corpus needs at least two distinct characters")
        lookup = {ch: i for i, ch in enumerate(vocab)}
        ids = np.fromiter((lookup[ch] for ch in text), dtype=np.int64, count=len(text))
        cut = int(round(len(ids) * (1 - held_out_fraction)))
        return cls(vocab, ids[:cut], ids[cut:])

    @classmethod
    def load(cls, source=None, held_out_fraction=HELD_OUT_FRACTION):
        """``source`` is None (bundled corpus), a path, or raw text containing a newline."""
        if source is None:
            text = bundled_text()
        elif isinstance(source, Path) or "\n" not in str(source):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = str(source)
        return cls.from_text(text, held_out_fraction)

    def encode(self, text):
        lookup = {ch: i for i, ch in enumerate(self.vocab)}
        try:
            return np.array([lookup[ch] for ch in text.lower()], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids):
        return "".join(self.vocab[i] for i in ids)


class BatchSampler:
    """Uniformly random training windows drawn from a seeded generator."""

    def __init__(self, tokens, context, batch_size, rng):
        n = tokens.size - context
        if n <= 0:
            raise ValueError("training split is shorter than the context window")
        self.windows = np.lib.stride_tricks.sliding_window_view(tokens[:-1], context)
        self.targets = tokens[context:]
        self.batch_size = batch_size
        self.rng = rng

    def __call__(self):
        idx = self.rng.integers(0, self.targets.size, size=self.batch_size)
        return self.windows[idx], self.targets[idx]
