"""Concept extraction from clinical sentences.

Three pieces work over tokenized sentences:

* a dictionary matcher that maps token sequences to CUIs (greedy
  longest match over a token trie),
* NegEx-style negation: trigger phrases open a scope that runs to the end
  of the sentence (or a fixed token window) unless a terminator intervenes,
* regex concepts (lupus nephritis class II-V, quantified proteinuria) whose
  matches are discarded when they fall inside a negation scope.
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .cohort import PatientRecord
from .errors import ConfigError
from .textpipe import (
    DEFAULT_ABBREVIATIONS,
    Sentence,
    Token,
    segment_sentences,
    sentence_ranges,
    deduplicate_notes,
    tokenize,
)

SENTENCE_SCOPE = "sentence"


def _data_path(name: str) -> Path:
    return Path(str(resources.files("lnpheno") / "data" / name))


def _phrase(text: str) -> tuple[str, ...]:
    return tuple(t.lower for t in tokenize(text))


class _PhraseTrie:
    """Token-sequence trie with greedy leftmost-longest scanning."""

    _END = object()

    def __init__(self):
        self.root: dict = {}

    def add(self, phrase: Sequence[str], payload) -> None:
        node = self.root
        for tok in phrase:
            node = node.setdefault(tok, {})
        node.setdefault(self._END, payload)

    def longest_at(self, tokens: Sequence[str], i: int):
        node = self.root
        best = None
        j = i
        while j < len(tokens):
            node = node.get(tokens[j])
            if node is None:
                break
            j += 1
            if self._END in node:
                best = (j, node[self._END])
        return best

    def scan(self, tokens: Sequence[str]) -> list[tuple[int, int, object]]:
        out = []
        i = 0
        root = self.root
        while i < len(tokens):
            if tokens[i] in root:
                hit = self.longest_at(tokens, i)
                if hit is not None:
                    end, payload = hit
                    out.append((i, end, payload))
                    i = end
                    continue
            i += 1
        return out


# --------------------------------------------------------------------------
# Lexicon and dictionary matching
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LexiconEntry:
    preferred_name: str
    terms: tuple[tuple[str, ...], ...]


class Lexicon:
    """CUI -> preferred name and lowercased term token sequences.

    When the same term is listed under several CUIs the lexicographically
    smallest CUI owns it, so matches never overlap.
    """

    def __init__(self, entries: Mapping[str, LexiconEntry]):
        self.entries = dict(entries)
        self._trie = _PhraseTrie()
        owners: dict[tuple[str, ...], str] = {}
        for cui in sorted(self.entries):
            for term in self.entries[cui].terms:
                if not term:
                    raise ConfigError(f"empty term for {cui}")
                owners.setdefault(term, cui)
        for term, cui in owners.items():
            self._trie.add(term, cui)

    @classmethod
    def from_terms(cls, terms: Mapping[str, Iterable[str]], names: Mapping[str, str] | None = None) -> "Lexicon":
        names = names or {}
        return cls({
            cui: LexiconEntry(names.get(cui, cui), tuple(dict.fromkeys(_phrase(t) for t in ts)))
            for cui, ts in terms.items()
        })

    @classmethod
    def load(cls, path) -> "Lexicon":
        """Read ``cui<TAB>preferred_name<TAB>term`` lines; ``#`` starts a comment."""
        terms: dict[str, list[str]] = {}
        names: dict[str, str] = {}
        with Path(path).open(encoding="utf-8", newline="") as fh:
            for line_no, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
                if not row or not "".join(row).strip() or row[0].startswith("#"):
                    continue
                if len(row) != 3:
                    raise ConfigError(f"{path}:{line_no}: expected 3 tab-separated columns, got {len(row)}")
                cui, name, term = (c.strip() for c in row)
                if not _phrase(term):
                    raise ConfigError(f"{path}:{line_no}: term is empty")
                names.setdefault(cui, name)
                terms.setdefault(cui, []).append(term)
        return cls.from_terms(terms, names)

    @classmethod
    def default(cls) -> "Lexicon":
        return cls.load(_data_path("lexicon.tsv"))

    def __len__(self):
        return len(self.entries)

    def scan(self, lower_tokens: Sequence[str]) -> list[tuple[int, int, str]]:
        return self._trie.scan(lower_tokens)


@dataclass(frozen=True)
class ConceptMention:
    cui: str
    note_id: str
    sentence_index: int
    token_span: tuple[int, int]
    negated: bool
    matched_text: str


def match_concepts(sentence: Sentence, lexicon: Lexicon) -> list[ConceptMention]:
    """Greedy left-to-right longest match of lexicon terms over lowercased tokens."""
    toks = sentence.tokens
    return [
        ConceptMention(cui, sentence.note_id, sentence.index, (s, e), False,
                       " ".join(t.text for t in toks[s:e]))
        for s, e, cui in lexicon.scan(sentence.lower_tokens)
    ]


# --------------------------------------------------------------------------
# Negation
# --------------------------------------------------------------------------

_PRE, _POST, _PSEUDO, _TERM = "pre", "post", "pseudo", "term"


@dataclass(frozen=True)
class NegationConfig:
    pre_triggers: tuple[tuple[str, ...], ...]
    post_triggers: tuple[tuple[str, ...], ...] = ()
    terminators: tuple[tuple[str, ...], ...] = (("but",),)
    pseudo_triggers: tuple[tuple[str, ...], ...] = ()
    scope: int | str = SENTENCE_SCOPE
    _trie: _PhraseTrie = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.scope != SENTENCE_SCOPE and not (isinstance(self.scope, int) and self.scope >= 1):
            raise ConfigError(f"scope must be {SENTENCE_SCOPE!r} or an integer >= 1, got {self.scope!r}")
        trie = _PhraseTrie()
        # First registration wins, so a pseudo-trigger shadows an identical real one.
        for kind, phrases in ((_PSEUDO, self.pseudo_triggers), (_TERM, self.terminators),
                              (_PRE, self.pre_triggers), (_POST, self.post_triggers)):
            for p in phrases:
                if not p:
                    raise ConfigError(f"empty {kind} phrase in negation config")
                trie.add(p, kind)
        object.__setattr__(self, "_trie", trie)

    @classmethod
    def from_dict(cls, d: Mapping) -> "NegationConfig":
        def phrases(key):
            return tuple(_phrase(s) for s in d.get(key, ()))
        scope = d.get("scope", SENTENCE_SCOPE)
        return cls(phrases("pre_triggers"), phrases("post_triggers"), phrases("terminators"),
                   phrases("pseudo_triggers"), scope)

    @classmethod
    def load(cls, path) -> "NegationConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from None

    @classmethod
    def default(cls) -> "NegationConfig":
        return cls.load(_data_path("negation.json"))

    def reach(self) -> float:
        return float("inf") if self.scope == SENTENCE_SCOPE else self.scope

    def triggers(self, lower_tokens: Sequence[str]) -> list[tuple[int, int, str]]:
        return self._trie.scan(lower_tokens)


def negated_flags(lower_tokens: Sequence[str], spans: Sequence[tuple[int, int]],
                  config: NegationConfig) -> list[bool]:
    """Decide negation for each token span of one sentence.

    A span is negated when a pre-trigger ends before it (within ``scope``
    tokens, no terminator in between) or a post-trigger starts after it
    under the same conditions. Trigger hits that overlap any of the spans
    are ignored, since they belong to the concept text itself.
    """
    if not spans:
        return []
    hits = [h for h in config.triggers(lower_tokens)
            if not any(h[0] < e and s < h[1] for s, e in spans)]
    terms = [s for s, _, kind in hits if kind == _TERM]
    reach = config.reach()
    flags = []
    for s, e in spans:
        negated = False
        for ts, te, kind in hits:
            if kind == _PRE and te <= s and s - te < reach:
                negated = not any(te <= t < s for t in terms)
            elif kind == _POST and ts >= e and ts - e < reach:
                negated = not any(e <= t < ts for t in terms)
            if negated:
                break
        flags.append(negated)
    return flags


def detect_negation(sentence: Sentence, mentions: Sequence[ConceptMention],
                    config: NegationConfig) -> list[ConceptMention]:
    flags = negated_flags(sentence.lower_tokens, [m.token_span for m in mentions], config)
    return [replace(m, negated=f) for m, f in zip(mentions, flags)]


# --------------------------------------------------------------------------
# Regex concepts
# --------------------------------------------------------------------------

DEFAULT_REGEX_CONCEPTS = (
    "nephritis_class_II",
    "nephritis_class_III",
    "nephritis_class_IV",
    "nephritis_class_V",
    "proteinuria",
)


class RegexConceptSet:
    """Named concepts, each a list of case-insensitive patterns."""

    def __init__(self, concepts: Mapping[str, Sequence[str]]):
        self.sources = {name: tuple(pats) for name, pats in concepts.items()}
        self.patterns: dict[str, tuple[re.Pattern, ...]] = {}
        for name, pats in self.sources.items():
            if not pats:
                raise ConfigError(f"regex concept {name!r} has no patterns")
            compiled = []
            for p in pats:
                try:
                    compiled.append(re.compile(p, re.IGNORECASE))
                except re.error as exc:
                    raise ConfigError(f"regex concept {name!r}: pattern {p!r} does not compile: {exc}") from None
            self.patterns[name] = tuple(compiled)

    @property
    def names(self) -> list[str]:
        return list(self.patterns)

    @classmethod
    def load(cls, path) -> "RegexConceptSet":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from None
        if not isinstance(doc.get("concepts"), dict):
            raise ConfigError(f"{path}: expected an object with a 'concepts' mapping")
        return cls(doc["concepts"])

    @classmethod
    def default(cls) -> "RegexConceptSet":
        return cls.load(_data_path("regex.json"))


@dataclass(frozen=True)
class RegexHit:
    concept: str
    note_id: str
    sentence_index: int
    char_span: tuple[int, int]  # within the sentence text
    token_span: tuple[int, int]
    negated: bool
    matched_text: str


def _merge_spans(spans: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Leftmost-longest non-overlapping selection."""
    out: list[tuple[int, int]] = []
    for s, e in sorted(set(spans), key=lambda se: (se[0], -se[1])):
        if out and s < out[-1][1]:
            continue
        out.append((s, e))
    return out


def _token_span(tokens: Sequence[Token], start: int, end: int) -> tuple[int, int]:
    idx = [i for i, t in enumerate(tokens) if t.start < end and start < t.end]
    if not idx:
        return (0, 0)
    return (idx[0], idx[-1] + 1)


def find_regex_hits(sentence: Sentence, regex_set: RegexConceptSet,
                    negation_config: NegationConfig) -> list[RegexHit]:
    """All regex concept matches in one sentence, negated ones included."""
    found: list[tuple[str, int, int]] = []
    for name, pats in regex_set.patterns.items():
        spans = [m.span() for p in pats for m in p.finditer(sentence.text) if m.end() > m.start()]
        found.extend((name, s, e) for s, e in _merge_spans(spans))
    if not found:
        return []
    tok_spans = [_token_span(sentence.tokens, s, e) for _, s, e in found]
    flags = negated_flags(sentence.lower_tokens, tok_spans, negation_config)
    return [
        RegexHit(name, sentence.note_id, sentence.index, (s, e), ts, neg, sentence.text[s:e])
        for (name, s, e), ts, neg in zip(found, tok_spans, flags)
    ]


def match_regex_concepts(note_text: str, sentences: Sequence[Sentence], regex_set: RegexConceptSet,
                         negation_config: NegationConfig) -> dict[str, int]:
    """Count non-negated regex hits per concept over the sentences of a note.

    Matches are searched sentence by sentence, so a match is always located
    inside one sentence; text spanning a sentence boundary never matches.
    ``note_text`` is accepted for interface symmetry and is not re-scanned.
    """
    counts: Counter[str] = Counter()
    for sent in sentences:
        for hit in find_regex_hits(sent, regex_set, negation_config):
            if not hit.negated:
                counts[hit.concept] += 1
    return dict(counts)


# --------------------------------------------------------------------------
# Patient profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConceptProfile:
    patient_id: str
    cui_counts: Mapping[str, int] = field(default_factory=dict)
    regex_hits: Mapping[str, int] = field(default_factory=dict)
    structured_positive: bool | None = None
    label: bool | None = field(default=None, compare=False)

    def count(self, feature: str) -> int:
        return self.cui_counts.get(feature, 0) or self.regex_hits.get(feature, 0)

    def to_dict(self) -> dict:
        row = {
            "patient_id": self.patient_id,
            "cui_counts": dict(sorted(self.cui_counts.items())),
            "regex_hits": dict(sorted(self.regex_hits.items())),
            "structured_positive": self.structured_positive,
        }
        if self.label is not None:
            row["label"] = self.label
        return row

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConceptProfile":
        return cls(str(d["patient_id"]), {k: int(v) for k, v in d.get("cui_counts", {}).items()},
                   {k: int(v) for k, v in d.get("regex_hits", {}).items()},
                   d.get("structured_positive"), d.get("label"))


@dataclass(frozen=True)
class Evidence:
    """One located concept occurrence, kept for error analysis."""

    feature: str
    note_id: str
    sentence_index: int
    matched_text: str
    sentence: str
    negated: bool

    def to_dict(self) -> dict:
        return {"feature": self.feature, "note_id": self.note_id, "sentence_index": self.sentence_index,
                "matched_text": self.matched_text, "sentence": self.sentence, "negated": self.negated}


class ConceptExtractor:
    """Runs dedup -> segment -> tokenize -> match -> negate -> regex per patient.

    Sentence-level results are memoized by sentence text; the configs are
    treated as immutable once the extractor is built.
    """

    def __init__(self, lexicon: Lexicon | None = None, regex_set: RegexConceptSet | None = None,
                 negation_config: NegationConfig | None = None,
                 abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS, cache_size: int = 200_000):
        self.lexicon = lexicon if lexicon is not None else Lexicon.default()
        self.regex_set = regex_set if regex_set is not None else RegexConceptSet.default()
        self.negation_config = negation_config if negation_config is not None else NegationConfig.default()
        self.abbreviations = abbreviations
        self._cache: dict[str, tuple[tuple[tuple[str, int], ...], tuple[tuple[str, int], ...]]] = {}
        self._cache_size = cache_size

    def analyze(self, sentence: Sentence) -> tuple[list[ConceptMention], list[RegexHit]]:
        mentions = detect_negation(sentence, match_concepts(sentence, self.lexicon), self.negation_config)
        hits = find_regex_hits(sentence, self.regex_set, self.negation_config)
        return mentions, hits

    def _sentence_counts(self, text: str):
        cached = self._cache.get(text)
        if cached is None:
            mentions, hits = self.analyze(Sentence("", 0, text, tuple(tokenize(text))))
            cached = (
                tuple(Counter(m.cui for m in mentions if not m.negated).items()),
                tuple(Counter(h.concept for h in hits if not h.negated).items()),
            )
            if len(self._cache) >= self._cache_size:
                self._cache.clear()
            self._cache[text] = cached
        return cached

    def _sentence_texts(self, text: str) -> Iterable[str]:
        for s, e in sentence_ranges(text, self.abbreviations):
            chunk = text[s:e].strip()
            if chunk:
                yield chunk

    def profile(self, patient: PatientRecord, baseline_flag: bool | None = None) -> ConceptProfile:
        cuis: Counter[str] = Counter()
        regex: Counter[str] = Counter()
        for note in deduplicate_notes(patient.notes):
            for sent_text in self._sentence_texts(note.text):
                c, r = self._sentence_counts(sent_text)
                for k, v in c:
                    cuis[k] += v
                for k, v in r:
                    regex[k] += v
        return ConceptProfile(patient.patient_id, dict(sorted(cuis.items())), dict(sorted(regex.items())),
                              baseline_flag, patient.label)

    def evidence(self, patient: PatientRecord, features: Iterable[str] | None = None) -> list[Evidence]:
        """Located CUI and regex occurrences (negated ones included) for the given features."""
        wanted = set(features) if features is not None else None
        out = []

        for note in deduplicate_notes(patient.notes):
            for sent in segment_sentences(note.text, note.note_id, self.abbreviations):
                mentions, hits = self.analyze(sent)
                for m in mentions:
                    if wanted is None or m.cui in wanted:
                        out.append(Evidence(m.cui, note.note_id, sent.index, m.matched_text, sent.text, m.negated))
                for h in hits:
                    if wanted is None or h.concept in wanted:
                        out.append(Evidence(h.concept, note.note_id, sent.index, h.matched_text, sent.text,
                                            h.negated))
        return out


def extract_patient_profile(patient: PatientRecord, lexicon: Lexicon, regex_set: RegexConceptSet,
                            negation_config: NegationConfig, baseline_flag: bool | None) -> ConceptProfile:
    return ConceptExtractor(lexicon, regex_set, negation_config).profile(patient, baseline_flag)
