"""Patient bundles: data model, JSONL ingestion, filtering and splitting.

A cohort is read from four JSONL files (notes, labs, codes, labels) plus an
optional encounters file. Rows are grouped by ``patient_id``; a row that
references a patient seen nowhere else simply creates that patient.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import CohortFormatError, DataError

# the decimal point is optional because many extracts store codes without it
ICD_PATTERNS = {
    "ICD9": re.compile(r"^(?:\d{3}|V\d{2}|E\d{3})(?:\.?\d{1,2})?$"),
    "ICD10": re.compile(r"^[A-Z]\d[0-9A-Z](?:\.?[0-9A-Z]{1,4})?$"),
}

NOTES_FILE = "notes.jsonl"
LABS_FILE = "labs.jsonl"
CODES_FILE = "codes.jsonl"
LABELS_FILE = "labels.jsonl"
ENCOUNTERS_FILE = "encounters.jsonl"


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class ClinicalNote:
    note_id: str
    patient_id: str
    department: str
    note_type: str
    date: date
    text: str

    def __post_init__(self):
        if not normalize_whitespace(self.text):
            raise ValueError(f"note {self.note_id!r} has empty text")


@dataclass(frozen=True)
class LabResult:
    patient_id: str
    date: date
    code: str
    name: str
    value: float
    unit: str

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"lab value must be finite, got {self.value!r}")
        if not self.unit.strip():
            raise ValueError("lab unit must be non-empty")


@dataclass(frozen=True)
class DiagnosisCode:
    patient_id: str
    date: date
    system: str
    code: str

    def __post_init__(self):
        pattern = ICD_PATTERNS.get(self.system)
        if pattern is None:
            raise ValueError(f"unknown code system {self.system!r}")
        if not pattern.match(self.code):
            raise ValueError(f"{self.code!r} is not a valid {self.system} code")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    notes: tuple[ClinicalNote, ...] = ()
    labs: tuple[LabResult, ...] = ()
    codes: tuple[DiagnosisCode, ...] = ()
    encounter_count: int = 0
    label: bool | None = None

    def __post_init__(self):
        for child in (*self.notes, *self.labs, *self.codes):
            if child.patient_id != self.patient_id:
                raise ValueError(
                    f"record for {child.patient_id!r} attached to patient {self.patient_id!r}"
                )
        if self.encounter_count < 0:
            raise ValueError("encounter_count must be non-negative")


@dataclass(frozen=True)
class Cohort:
    patients: tuple[PatientRecord, ...] = ()
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise ValueError("patient_id values must be unique within a cohort")

    def __len__(self):
        return len(self.patients)

    def __iter__(self) -> Iterator[PatientRecord]:
        return iter(self.patients)

    @property
    def patient_ids(self) -> list[str]:
        return [p.patient_id for p in self.patients]

    @property
    def labels(self) -> list[bool | None]:
        return [p.label for p in self.patients]

    def subset(self, patient_ids: Iterable[str]) -> "Cohort":
        keep = set(patient_ids)
        return Cohort(tuple(p for p in self.patients if p.patient_id in keep), self.provenance)


def distinct_note_dates(notes: Iterable[ClinicalNote]) -> int:
    return len({n.date for n in notes})


# --------------------------------------------------------------------------
# JSONL ingestion
# --------------------------------------------------------------------------


def _read_jsonl(path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CohortFormatError(path, line_no, f"invalid JSON: {exc.msg}") from None
            if not isinstance(row, dict):
                raise CohortFormatError(path, line_no, "expected a JSON object")
            yield line_no, row


def _require(row: dict, keys: tuple[str, ...], path, line_no) -> None:
    missing = [k for k in keys if k not in row]
    if missing:
        raise CohortFormatError(path, line_no, f"missing field(s): {', '.join(missing)}")


def _parse_date(value, path, line_no) -> date:
    try:
        return date.fromisoformat(value)
    except (TypeError, ValueError):
        raise CohortFormatError(path, line_no, f"bad date {value!r}, expected YYYY-MM-DD") from None


def _build(factory, path, line_no, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise CohortFormatError(path, line_no, str(exc)) from None


def load_cohort(note_path, lab_path, code_path, label_path, encounter_path=None) -> Cohort:
    """Read the JSONL file set into a :class:`Cohort`.

    Patients are ordered by ``patient_id``. ``encounter_count`` comes from
    the encounters file when given, otherwise it is the number of distinct
    note dates. Labels are optional; missing ones stay ``None``.
    """
    notes: dict[str, list[ClinicalNote]] = {}
    labs: dict[str, list[LabResult]] = {}
    codes: dict[str, list[DiagnosisCode]] = {}
    labels: dict[str, bool] = {}
    encounters: dict[str, int] = {}
    seen_note_ids: set[str] = set()

    for line_no, row in _read_jsonl(note_path):
        _require(row, ("patient_id", "note_id", "department", "note_type", "date", "text"), note_path, line_no)
        if not isinstance(row["text"], str):
            raise CohortFormatError(note_path, line_no, "text must be a string")
        note_id = str(row["note_id"])
        if note_id in seen_note_ids:
            raise CohortFormatError(note_path, line_no, f"duplicate note_id {note_id!r}")
        seen_note_ids.add(note_id)
        note = _build(
            ClinicalNote, note_path, line_no,
            note_id=note_id,
            patient_id=str(row["patient_id"]),
            department=str(row["department"]),
            note_type=str(row["note_type"]),
            date=_parse_date(row["date"], note_path, line_no),
            text=row["text"],
        )
        notes.setdefault(note.patient_id, []).append(note)

    for line_no, row in _read_jsonl(lab_path):
        _require(row, ("patient_id", "date", "code", "name", "value", "unit"), lab_path, line_no)
        value = row["value"]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CohortFormatError(lab_path, line_no, f"value must be a number, got {value!r}")
        lab = _build(
            LabResult, lab_path, line_no,
            patient_id=str(row["patient_id"]),
            date=_parse_date(row["date"], lab_path, line_no),
            code=str(row["code"]),
            name=str(row["name"]),
            value=float(value),
            unit=str(row["unit"]),
        )
        labs.setdefault(lab.patient_id, []).append(lab)

    for line_no, row in _read_jsonl(code_path):
        _require(row, ("patient_id", "date", "system", "code"), code_path, line_no)
        dx = _build(
            DiagnosisCode, code_path, line_no,
            patient_id=str(row["patient_id"]),
            date=_parse_date(row["date"], code_path, line_no),
            system=str(row["system"]),
            code=str(row["code"]),
        )
        codes.setdefault(dx.patient_id, []).append(dx)

    for line_no, row in _read_jsonl(label_path):
        _require(row, ("patient_id", "label"), label_path, line_no)
        if not isinstance(row["label"], bool):
            raise CohortFormatError(label_path, line_no, "label must be true or false")
        labels[str(row["patient_id"])] = row["label"]

    if encounter_path is not None:
        for line_no, row in _read_jsonl(encounter_path):
            _require(row, ("patient_id", "encounter_count"), encounter_path, line_no)
            count = row["encounter_count"]
            if isinstance(count, bool) or not isinstance(count, int) or count < 0:
                raise CohortFormatError(encounter_path, line_no, "encounter_count must be a non-negative integer")
            encounters[str(row["patient_id"])] = count

    ids = sorted(set(notes) | set(labs) | set(codes) | set(labels) | set(encounters))
    patients = []
    for pid in ids:
        pnotes = tuple(notes.get(pid, ()))
        patients.append(
            PatientRecord(
                patient_id=pid,
                notes=pnotes,
                labs=tuple(labs.get(pid, ())),
                codes=tuple(codes.get(pid, ())),
                encounter_count=encounters.get(pid, distinct_note_dates(pnotes)),
                label=labels.get(pid),
            )
        )
    return Cohort(tuple(patients), provenance=f"loaded from {Path(note_path).parent}")


def load_cohort_dir(directory) -> Cohort:
    """Load the standard file names from one directory."""
    d = Path(directory)
    enc = d / ENCOUNTERS_FILE
    return load_cohort(
        d / NOTES_FILE, d / LABS_FILE, d / CODES_FILE, d / LABELS_FILE,
        enc if enc.exists() else None,
    )


def _dump(fh, row: dict) -> None:
    fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False))
    fh.write("\n")


def write_cohort(cohort: Cohort, directory) -> dict[str, Path]:
    """Serialize a cohort to the JSONL file set (inverse of :func:`load_cohort`)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "notes": d / NOTES_FILE,
        "labs": d / LABS_FILE,
        "codes": d / CODES_FILE,
        "labels": d / LABELS_FILE,
        "encounters": d / ENCOUNTERS_FILE,
    }
    with paths["notes"].open("w", encoding="utf-8") as fh:
        for p in cohort:
            for n in p.notes:
                _dump(fh, {"patient_id": n.patient_id, "note_id": n.note_id, "department": n.department,
                           "note_type": n.note_type, "date": n.date.isoformat(), "text": n.text})
    with paths["labs"].open("w", encoding="utf-8") as fh:
        for p in cohort:
            for lab in p.labs:
                _dump(fh, {"patient_id": lab.patient_id, "date": lab.date.isoformat(), "code": lab.code,
                           "name": lab.name, "value": lab.value, "unit": lab.unit})
    with paths["codes"].open("w", encoding="utf-8") as fh:
        for p in cohort:
            for c in p.codes:
                _dump(fh, {"patient_id": c.patient_id, "date": c.date.isoformat(),
                           "system": c.system, "code": c.code})
    with paths["labels"].open("w", encoding="utf-8") as fh:
        for p in cohort:
            if p.label is not None:
                _dump(fh, {"patient_id": p.patient_id, "label": p.label})
    with paths["encounters"].open("w", encoding="utf-8") as fh:
        for p in cohort:
            _dump(fh, {"patient_id": p.patient_id, "encounter_count": p.encounter_count})
    return paths


# --------------------------------------------------------------------------
# Filtering and splitting
# --------------------------------------------------------------------------


def filter_min_encounters(cohort: Cohort, min_encounters: int) -> Cohort:
    """Keep patients with at least ``min_encounters`` encounters."""
    if min_encounters < 0:
        raise ValueError("min_encounters must be >= 0")
    kept = tuple(p for p in cohort if p.encounter_count >= min_encounters)
    return replace(cohort, patients=kept)


def _train_sizes(counts: dict[bool, int], train_fraction: float) -> dict[bool, int]:
    n = sum(counts.values())
    n_train = math.floor(n * train_fraction)
    exact = {c: k * train_fraction for c, k in counts.items()}
    sizes = {c: math.floor(v) for c, v in exact.items()}
    remainder = n_train - sum(sizes.values())
    # Hand the leftover train slots to the classes with the largest fractional parts;
    # ties go to the positive class.
    order = sorted(counts, key=lambda c: (-(exact[c] - sizes[c]), not c))
    for c in order[:remainder]:
        sizes[c] += 1
    return sizes


def split_cohort(cohort: Cohort, train_fraction: float = 0.75, stratified: bool = True,
                 seed: int = 0) -> tuple[Cohort, Cohort]:
    """Partition a labeled cohort into train and test parts.

    The train part holds ``floor(n * train_fraction)`` patients. Under
    stratification each class contributes ``floor(n_c * train_fraction)``
    and any leftover train slots go to the class with the larger
    fractional remainder. Both parts keep the cohort's patient order.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    unlabeled = [p.patient_id for p in cohort if p.label is None]
    if unlabeled:
        raise DataError(f"{len(unlabeled)} unlabeled patient(s), e.g. {unlabeled[0]!r}; split needs gold labels")

    rng = np.random.default_rng(seed)
    index = np.arange(len(cohort))
    if stratified:
        labels = np.array([p.label for p in cohort], dtype=bool)
        counts = {c: int((labels == c).sum()) for c in (True, False)}
        sizes = _train_sizes(counts, train_fraction)
        train_idx: list[int] = []
        for c in (True, False):
            members = index[labels == c]
            train_idx.extend(rng.permutation(members)[: sizes[c]].tolist())
    else:
        n_train = math.floor(len(cohort) * train_fraction)
        train_idx = rng.permutation(index)[:n_train].tolist()

    in_train = set(train_idx)
    train = tuple(p for i, p in enumerate(cohort.patients) if i in in_train)
    test = tuple(p for i, p in enumerate(cohort.patients) if i not in in_train)
    return (
        Cohort(train, f"{cohort.provenance} [train seed={seed}]"),
        Cohort(test, f"{cohort.provenance} [test seed={seed}]"),
    )
