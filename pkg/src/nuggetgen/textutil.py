import re
import unicodedata

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+|(?<=[.!?][\"'”’)\]])\s+")


def tokenize(text: str) -> list[str]:
    """Lowercase, delete punctuation characters, split on whitespace."""
    return "".join(c for c in text.lower() if not unicodedata.category(c).startswith("P")).split()


def split_sentences(text: str) -> list[str]:
    """Split after ., ! or ? (optionally closed by a quote or bracket) plus whitespace."""
    return [s.strip() for s in _SENTENCE_END.split(text.strip()) if s.strip()]
