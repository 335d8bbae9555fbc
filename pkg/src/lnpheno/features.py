"""Patient x feature matrices for the three regression models.

``binary`` and ``count`` matrices hold every CUI whose patient-level
document frequency reaches a threshold; the ``mixed`` matrix has a fixed
13-column layout (7 curated CUIs, 5 regex concepts, the structured flag).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .concepts import DEFAULT_REGEX_CONCEPTS, ConceptProfile
from .errors import ConfigError, DataError

KINDS = ("binary", "count", "mixed")
STRUCTURED_FEATURE = "structured_positive"
CURATED_CUIS = ("C0024143", "C0268757", "C0268758", "C4053955", "C4053958", "C4053959", "C4054543")


@dataclass(frozen=True)
class FeaturizerConfig:
    min_doc_freq_binary: int = 30
    min_doc_freq_count: int = 40
    curated_cuis: tuple[str, ...] = CURATED_CUIS
    regex_concepts: tuple[str, ...] = DEFAULT_REGEX_CONCEPTS

    def __post_init__(self):
        if len(self.curated_cuis) != 7:
            raise ConfigError(f"curated_cuis must list 7 CUIs, got {len(self.curated_cuis)}")
        if len(self.regex_concepts) != 5:
            raise ConfigError(f"regex_concepts must list 5 concepts, got {len(self.regex_concepts)}")

    @property
    def mixed_features(self) -> list[str]:
        return [*self.curated_cuis, *self.regex_concepts, STRUCTURED_FEATURE]


@dataclass
class FeatureMatrix:
    patient_ids: list[str]
    feature_names: list[str]
    values: sparse.csr_matrix
    kind: str
    min_doc_freq: int | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown matrix kind {self.kind!r}")
        self.values = sparse.csr_matrix(self.values, dtype=np.float64)
        if self.values.shape != (len(self.patient_ids), len(self.feature_names)):
            raise ValueError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.patient_ids)} patients x {len(self.feature_names)} features"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def dense(self) -> np.ndarray:
        return self.values.toarray()

    def rows(self, patient_ids: Sequence[str]) -> "FeatureMatrix":
        pos = {p: i for i, p in enumerate(self.patient_ids)}
        idx = [pos[p] for p in patient_ids]
        return FeatureMatrix(list(patient_ids), list(self.feature_names), self.values[idx], self.kind,
                             self.min_doc_freq, list(self.warnings))


def document_frequency(profiles: Sequence[ConceptProfile], feature: str) -> int:
    """Number of patients with at least one non-negated occurrence of ``feature``."""
    return sum(1 for p in profiles if p.count(feature) >= 1)


def _cui_document_frequencies(profiles: Sequence[ConceptProfile]) -> dict[str, int]:
    df: dict[str, int] = {}
    for p in profiles:
        for cui, n in p.cui_counts.items():
            if n >= 1:
                df[cui] = df.get(cui, 0) + 1
    return df


def _cui_matrix(profiles, kind, threshold, vocabulary) -> FeatureMatrix:
    if not profiles:
        raise DataError("cannot build a feature matrix from zero profiles")
    warnings = []
    if vocabulary is None:
        df = _cui_document_frequencies(profiles)
        names = sorted(c for c, n in df.items() if n >= threshold)
        if not names:
            raise DataError(
                f"no CUI reaches document frequency {threshold} across {len(profiles)} patients; "
                "lower the minimum document frequency"
            )
    else:
        names = list(vocabulary)
        df = _cui_document_frequencies(profiles)
        warnings = [f"feature {n} not observed in any patient; column imputed as 0" for n in names if n not in df]
    col = {n: j for j, n in enumerate(names)}
    rows, cols, vals = [], [], []
    for i, p in enumerate(profiles):
        for cui, n in p.cui_counts.items():
            j = col.get(cui)
            if j is not None and n >= 1:
                rows.append(i)
                cols.append(j)
                vals.append(1.0 if kind == "binary" else float(n))
    values = sparse.csr_matrix((vals, (rows, cols)), shape=(len(profiles), len(names)), dtype=np.float64)
    return FeatureMatrix([p.patient_id for p in profiles], names, values, kind,
                         threshold if vocabulary is None else None, warnings)


def build_binary_matrix(profiles: Sequence[ConceptProfile], config: FeaturizerConfig = FeaturizerConfig(),
                        vocabulary: Sequence[str] | None = None) -> FeatureMatrix:
    """CUI presence indicators for CUIs seen in >= ``min_doc_freq_binary`` patients.

    With ``vocabulary`` the columns are fixed instead (external scoring); unseen
    columns stay zero and are listed in ``warnings``.
    """
    return _cui_matrix(profiles, "binary", config.min_doc_freq_binary, vocabulary)


def build_count_matrix(profiles: Sequence[ConceptProfile], config: FeaturizerConfig = FeaturizerConfig(),
                       vocabulary: Sequence[str] | None = None) -> FeatureMatrix:
    """Raw non-negated mention counts; same column rule as the binary matrix at ``min_doc_freq_count``."""
    return _cui_matrix(profiles, "count", config.min_doc_freq_count, vocabulary)


def build_mixed_matrix(profiles: Sequence[ConceptProfile],
                       config: FeaturizerConfig = FeaturizerConfig()) -> FeatureMatrix:
    names = config.mixed_features
    values = np.zeros((len(profiles), len(names)))
    for i, p in enumerate(profiles):
        if p.structured_positive is None:
            raise DataError(f"profile {p.patient_id!r} lacks the structured baseline flag")
        for j, cui in enumerate(config.curated_cuis):
            values[i, j] = p.cui_counts.get(cui, 0) >= 1
        for j, concept in enumerate(config.regex_concepts, start=len(config.curated_cuis)):
            values[i, j] = p.regex_hits.get(concept, 0) >= 1
        values[i, -1] = bool(p.structured_positive)
    return FeatureMatrix([p.patient_id for p in profiles], names, sparse.csr_matrix(values), "mixed")


def build_matrix(profiles: Sequence[ConceptProfile], kind: str, config: FeaturizerConfig = FeaturizerConfig(),
                 vocabulary: Sequence[str] | None = None) -> FeatureMatrix:
    if kind == "binary":
        return build_binary_matrix(profiles, config, vocabulary)
    if kind == "count":
        return build_count_matrix(profiles, config, vocabulary)
    if kind == "mixed":
        m = build_mixed_matrix(profiles, config)
        if vocabulary is not None and list(vocabulary) != m.feature_names:
            raise ConfigError("mixed-model vocabulary does not match the featurizer configuration")
        return m
    raise ConfigError(f"unknown matrix kind {kind!r}")


# --------------------------------------------------------------------------
# Triplet CSV export
# --------------------------------------------------------------------------


def write_matrix(matrix: FeatureMatrix, csv_path) -> Path:
    """Write ``patient_id,feature_name,value`` triplets plus a ``.json`` sidecar header."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    coo = matrix.values.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "feature_name", "value"])
        for k in order:
            v = coo.data[k]
            w.writerow([matrix.patient_ids[coo.row[k]], matrix.feature_names[coo.col[k]],
                        int(v) if float(v).is_integer() else repr(float(v))])
    header = {
        "kind": matrix.kind,
        "feature_names": matrix.feature_names,
        "min_doc_freq": matrix.min_doc_freq,
        "patient_ids": matrix.patient_ids,
    }
    sidecar = csv_path.with_suffix(".json")
    sidecar.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return sidecar


def read_matrix(csv_path) -> FeatureMatrix:
    csv_path = Path(csv_path)
    sidecar = csv_path.with_suffix(".json")
    for p in (csv_path, sidecar):
        if not p.is_file():
            raise DataError(f"{p}: file not found")
    try:
        header = json.loads(sidecar.read_text(encoding="utf-8"))
        header["feature_names"], header["kind"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{sidecar}: malformed matrix header: {exc}") from None
    names = header["feature_names"]
    col = {n: j for j, n in enumerate(names)}
    pids = header.get("patient_ids")
    rows, cols, vals = [], [], []
    seen: dict[str, int] = {p: i for i, p in enumerate(pids)} if pids is not None else {}
    with csv_path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for line_no, rec in enumerate(reader, start=2):
            try:
                pid, feat, val = rec["patient_id"], rec["feature_name"], float(rec["value"])
            except (KeyError, TypeError, ValueError):
                raise DataError(f"{csv_path}:{line_no}: malformed triplet") from None
            if feat not in col:
                raise DataError(f"{csv_path}:{line_no}: feature {feat!r} missing from header")
            if pid not in seen:
                if pids is not None:
                    raise DataError(f"{csv_path}:{line_no}: patient {pid!r} missing from header")
                seen[pid] = len(seen)
            rows.append(seen[pid])
            cols.append(col[feat])
            vals.append(val)
    order = list(seen)
    values = sparse.csr_matrix((vals, (rows, cols)), shape=(len(order), len(names)), dtype=np.float64)
    return FeatureMatrix(order, names, values, header["kind"], header.get("min_doc_freq"))
