"""Note preprocessing: duplicate removal, sentence segmentation, tokenization.

Offsets are Python string (code point) offsets into the text they index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .cohort import ClinicalNote, normalize_whitespace

DEFAULT_ABBREVIATIONS = frozenset({
    "dr.", "drs.", "mr.", "mrs.", "ms.", "pt.", "pts.", "vs.", "e.g.", "i.e.", "etc.",
    "approx.", "hx.", "dx.", "tx.", "rx.", "no.", "st.", "jr.", "sr.", "fig.",
})


@dataclass(frozen=True, slots=True)
class Token:
    text: str
    lower: str
    start: int
    end: int


@dataclass(frozen=True)
class Sentence:
    note_id: str
    index: int
    text: str
    tokens: tuple[Token, ...]
    start: int = 0  # offset of ``text`` within the note

    @property
    def token_spans(self) -> list[tuple[int, int]]:
        return [(t.start, t.end) for t in self.tokens]

    @property
    def lower_tokens(self) -> tuple[str, ...]:
        return tuple(t.lower for t in self.tokens)


# --------------------------------------------------------------------------
# Deduplication
# --------------------------------------------------------------------------


def deduplicate_notes(notes: Iterable[ClinicalNote]) -> list[ClinicalNote]:
    """Drop per-patient duplicates, keeping the earliest note (ties: lowest note_id)."""
    notes = list(notes)
    keeper: dict[tuple[str, str], ClinicalNote] = {}
    for note in notes:
        key = (note.patient_id, normalize_whitespace(note.text))
        best = keeper.get(key)
        if best is None or (note.date, note.note_id) < (best.date, best.note_id):
            keeper[key] = note
    survivors = {id(n) for n in keeper.values()}
    return [n for n in notes if id(n) in survivors]


# --------------------------------------------------------------------------
# Tokenization
# --------------------------------------------------------------------------

_NUMBER = r"\d+(?:[.,]\d+)*"
_UNIT = r"[^\W_]*(?:/[^\W\d_][^\W_]*|/\d+[^\W\d_]+[^\W_]*)*"
_TOKEN_RE = re.compile(
    rf"(?:[<>≤≥]=?|=)\s?\.?{_NUMBER}{_UNIT}"  # comparison: >0.5, >=500mg, ≥0.5g/day
    rf"|\.?{_NUMBER}{_UNIT}"  # quantity: 1.2, 0.5g/day, 500mg/24h
    r"|[^\W_]+"  # word
    r"|\S"  # any other single punctuation character
)


def tokenize(sentence_text: str, offset: int = 0) -> list[Token]:
    """Split text into word, quantity, comparison and punctuation tokens.

    ``offset`` is added to every span (used when tokenizing a slice).
    """
    return [
        Token(m.group(), m.group().lower(), m.start() + offset, m.end() + offset)
        for m in _TOKEN_RE.finditer(sentence_text)
    ]


# --------------------------------------------------------------------------
# Sentence segmentation
# --------------------------------------------------------------------------

_BOUNDARY_RE = re.compile(r"[.!?;](?=\s)|[.!?;]$|\n[ \t\r\f\v]*\n")


def load_abbreviations(path) -> frozenset[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return frozenset(s.strip().lower() for s in lines if s.strip() and not s.startswith("#"))


def _is_abbreviation(text: str, period_at: int, abbreviations: frozenset[str]) -> bool:
    ws = max(text.rfind(" ", 0, period_at), text.rfind("\n", 0, period_at), text.rfind("\t", 0, period_at))
    word = text[ws + 1: period_at + 1].lstrip("([{\"'").lower()
    return word in abbreviations


def sentence_ranges(text: str, abbreviations: frozenset[str]) -> list[tuple[int, int]]:
    """Return (start, end) character ranges of raw sentence chunks."""
    chunks = []
    start = 0
    for m in _BOUNDARY_RE.finditer(text):
        if m.group() == "." and _is_abbreviation(text, m.start(), abbreviations):
            continue
        end = m.end() if m.group()[0] != "\n" else m.start()
        chunks.append((start, end))
        start = m.end()
    chunks.append((start, len(text)))
    return chunks


def segment_sentences(text: str, note_id: str = "",
                      abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS) -> list[Sentence]:
    """Rule-based sentence splitter.

    Splits after ``. ! ? ;`` when followed by whitespace (or at end of
    text) and at blank lines. A period ending a known abbreviation does
    not split. Colons never split.
    """
    sentences = []
    for raw_start, raw_end in sentence_ranges(text, abbreviations):
        chunk = text[raw_start:raw_end]
        stripped = chunk.strip()
        if not stripped:
            continue
        start = raw_start + (len(chunk) - len(chunk.lstrip()))
        tokens = tuple(tokenize(stripped))
        sentences.append(Sentence(note_id, len(sentences), stripped, tokens, start))
    return sentences


def join_tokens(tokens: Sequence[Token]) -> str:
    return " ".join(t.text for t in tokens)
