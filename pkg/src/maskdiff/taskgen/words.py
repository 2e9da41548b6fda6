"""Category word lists shipped as a data asset."""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path

from ..errors import DataError

DATA_ENV = "MASKDIFF_DATA_DIR"
WORDLIST_FILE = "wordlists.tsv"


class WordBank:
    """Mapping category -> ordered tuple of words, with a reverse index."""

    def __init__(self, categories: dict[str, list[str]]):
        self.categories = {c: tuple(ws) for c, ws in categories.items()}
        self._category_of: dict[str, str] = {}
        for c, ws in self.categories.items():
            for w in ws:
                self._category_of.setdefault(w, c)

    def __getitem__(self, category: str) -> tuple[str, ...]:
        try:
            return self.categories[category]
        except KeyError:
            raise DataError(f"word list has no category {category!r}") from None

    def category_of(self, word: str) -> str | None:
        return self._category_of.get(word)

    def all_words(self) -> list[str]:
        return [w for ws in self.categories.values() for w in ws]

    @classmethod
    def parse(cls, text: str) -> "WordBank":
        cats: dict[str, list[str]] = {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"word list line {n}: expected 'category<TAB>word'")
            cats.setdefault(parts[0], []).append(parts[1])
        return cls(cats)


def _default_text() -> str:
    override = os.environ.get(DATA_ENV)
    if override:
        path = Path(override) / WORDLIST_FILE
        if not path.is_file():
            raise DataError(f"{DATA_ENV} is set but {path} does not exist")
        return path.read_text(encoding="utf-8")
    return resources.files("maskdiff.taskgen").joinpath("data", WORDLIST_FILE).read_text(encoding="utf-8")


_cache: dict[str, WordBank] = {}


def load_word_bank(path=None) -> WordBank:
    """Load the word bank from ``path``, ``$MASKDIFF_DATA_DIR`` or the packaged asset."""
    if path is not None:
        return WordBank.parse(Path(path).read_text(encoding="utf-8"))
    key = os.environ.get(DATA_ENV, "")
    if key not in _cache:
        _cache[key] = WordBank.parse(_default_text())
    return _cache[key]
