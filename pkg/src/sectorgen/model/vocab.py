"""Word-level vocabulary standing in for a subword tokenizer."""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable

from sectorgen.text import detokenize, tokenize

PAD = "<pad>"
EOS = "</s>"
UNK = "<unk>"
N_SENTINELS = 8


class UnknownTokenIndex(ValueError):
    pass


class Vocabulary:
    """Dense token <-> index map with special tokens at the front.

    Index 0 is padding (also the decoder start token), 1 end-of-sequence,
    2 unknown, followed by the span-corruption sentinels.
    """

    def __init__(self, tokens: Iterable[str] = ()):
        self.specials = [PAD, EOS, UNK] + [f"<extra_{i}>" for i in range(N_SENTINELS)]
        self.itos: list[str] = list(self.specials)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int = 512, extra: Iterable[str] = ()) -> "Vocabulary":
        """Most frequent corpus tokens (ties broken alphabetically) plus `extra` texts.

        Tokens of `extra` (sector names) are always included, the corpus fills
        the remaining slots up to `max_size`.
        """
        vocab = cls()
        for text in extra:
            for tok in tokenize(text):
                vocab.add(tok)
        counts = Counter(tok for text in texts for tok in tokenize(text))
        for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if len(vocab) >= max_size:
                break
            vocab.add(tok)
        return vocab

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    def sentinel_id(self, i: int) -> int:
        return 3 + i

    def encode(self, text: str, add_eos: bool = False) -> list[int]:
        ids = [self.stoi.get(tok, self.unk_id) for tok in tokenize(text)]
        if add_eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        tokens = []
        for i in ids:
            if i == self.eos_id:
                break
            if i < 0 or i >= len(self.itos):
                raise UnknownTokenIndex(i)
            if i == self.pad_id:
                continue
            tokens.append(self.itos[i])
        return detokenize(tokens)

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: list[str]) -> "Vocabulary":
        vocab = cls()
        if itos[: len(vocab.specials)] != vocab.specials:
            raise ValueError("vocabulary does not start with the expected special tokens")
        for tok in itos[len(vocab.specials):]:
            vocab.add(tok)
        return vocab
