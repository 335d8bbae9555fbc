"""Evaluation and explanation of phenotype classifiers.

Metrics whose denominator is zero are reported as ``None`` rather than 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.stats import rankdata

from .cohort import Cohort
from .concepts import ConceptExtractor
from .features import FeatureMatrix
from .glm import Model, decision_function, predict_proba


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(predictions: Sequence[bool], labels: Sequence[bool]) -> ConfusionMatrix:
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    p = np.asarray(predictions, dtype=bool)
    a = np.asarray(labels, dtype=bool)
    return ConfusionMatrix(int((p & a).sum()), int((p & ~a).sum()), int((~p & ~a).sum()), int((~p & a).sum()))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def f_measure(ppv: float | None, sensitivity: float | None) -> float | None:
    """Harmonic mean of precision and recall; ``None`` if either is undefined or both are 0."""
    if ppv is None or sensitivity is None or ppv + sensitivity == 0:
        return None
    return 2 * ppv * sensitivity / (ppv + sensitivity)


@dataclass(frozen=True)
class Metrics:
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    npv: float | None
    f_measure: float | None

    def rounded(self, ndigits: int = 2) -> dict:
        return {k: None if v is None else round(v, ndigits) for k, v in asdict(self).items()}


def metrics(cm: ConfusionMatrix) -> Metrics:
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    ppv = _ratio(cm.tp, cm.tp + cm.fp)
    return Metrics(sens, _ratio(cm.tn, cm.tn + cm.fp), ppv, _ratio(cm.tn, cm.tn + cm.fn), f_measure(ppv, sens))


def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> float | None:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie).

    Computed from mid-ranks doubled to stay integral, so the result is the
    exact pair-count ratio. ``None`` when a class is absent.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if len(s) != len(y):
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    twice_ranks = np.rint(2 * rankdata(s, method="average")).astype(np.int64)
    numerator = int(twice_ranks[y].sum()) - n_pos * (n_pos + 1)
    return numerator / (2 * n_pos * n_neg)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    npv: float | None
    f_measure: float | None
    auc: float | None
    per_patient: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def metric_row(self, ndigits: int = 2) -> dict:
        keys = ("sensitivity", "specificity", "ppv", "npv", "f_measure", "auc")
        return {k: None if getattr(self, k) is None else round(getattr(self, k), ndigits) for k in keys}

    def to_dict(self) -> dict:
        d = {
            "confusion": asdict(self.confusion),
            "n": self.confusion.total,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "ppv": self.ppv,
            "npv": self.npv,
            "f_measure": self.f_measure,
            "auc": self.auc,
            "per_patient": self.per_patient,
            "warnings": self.warnings,
        }
        d.update(self.info)
        return d

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def evaluate(patient_ids: Sequence[str], labels: Sequence[bool], probabilities: Sequence[float],
             threshold: float = 0.5, with_auc: bool = True) -> EvalReport:
    """Score thresholded probabilities against gold labels."""
    probs = np.asarray(probabilities, dtype=np.float64)
    preds = probs >= threshold
    cm = confusion(preds, labels)
    m = metrics(cm)
    per_patient = [
        {"patient_id": pid, "probability": float(p), "predicted": bool(pr), "actual": bool(a)}
        for pid, p, pr, a in zip(patient_ids, probs, preds, labels)
    ]
    auc = roc_auc(probs, labels) if with_auc else None
    return EvalReport(cm, m.sensitivity, m.specificity, m.ppv, m.npv, m.f_measure, auc, per_patient)


def evaluate_model(model: Model, matrix: FeatureMatrix, labels: Sequence[bool], threshold: float = 0.5) -> EvalReport:
    if list(matrix.feature_names) != list(model.feature_names):
        raise ValueError("matrix columns do not match the model's feature vocabulary")
    report = evaluate(matrix.patient_ids, labels, predict_proba(model, matrix.values), threshold)
    report.warnings.extend(matrix.warnings)
    return report


def rank_coefficients(model: Model, k: int = 5) -> list[tuple[str, float]]:
    """Top ``k`` features by signed coefficient (descending, ties by name)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pairs = sorted(zip(model.feature_names, (float(w) for w in model.weights)), key=lambda p: (-p[1], p[0]))
    return pairs[:k]


# --------------------------------------------------------------------------
# Shapley attributions
# --------------------------------------------------------------------------


@dataclass
class AttributionReport:
    feature_names: list[str]
    base_value: float
    patient_ids: list[str]
    contributions: np.ndarray  # patients x features
    mean_abs: np.ndarray

    @property
    def per_patient_contributions(self) -> dict[str, np.ndarray]:
        return dict(zip(self.patient_ids, self.contributions))

    def ranking(self) -> list[tuple[str, float]]:
        return sorted(zip(self.feature_names, (float(v) for v in self.mean_abs)), key=lambda p: (-p[1], p[0]))

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        attr_path, mean_path = out / "attributions.csv", out / "mean_abs.csv"
        with attr_path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "feature", "phi"])
            for pid, row in zip(self.patient_ids, self.contributions):
                for name, phi in zip(self.feature_names, row):
                    w.writerow([pid, name, repr(float(phi))])
        with mean_path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "mean_abs_phi"])
            for name, v in self.ranking():
                w.writerow([name, repr(v)])
        return attr_path, mean_path


def _dense(x) -> np.ndarray:
    return x.toarray() if sparse.issparse(x) else np.atleast_2d(np.asarray(x, dtype=np.float64))


def shap_linear(model: Model, X_background=None, X_explain=None, patient_ids: Sequence[str] | None = None
                ) -> AttributionReport:
    """Exact Shapley values of a linear logit under feature independence.

    ``phi_j(x) = w_j * (x_j - mu_j)`` with ``mu`` the background column means
    (``model.feature_means`` when no background is given), and
    ``base_value = w . mu + b`` so that ``base_value + sum(phi) = w . x + b``.
    """
    w = model.weights
    if X_background is not None:
        bg = _dense(X_background)
        if bg.shape[1] != len(w):
            raise ValueError("background width does not match the model")
        mu = bg.mean(axis=0)
    else:
        mu = model.feature_means
    X = _dense(X_explain if X_explain is not None else np.empty((0, len(w))))
    if X.shape[1] != len(w):
        raise ValueError(f"expected {len(w)} features, got {X.shape[1]}")
    phi = (X - mu) * w
    ids = list(patient_ids) if patient_ids is not None else [str(i) for i in range(X.shape[0])]
    mean_abs = np.abs(phi).mean(axis=0) if X.shape[0] else np.zeros(len(w))
    return AttributionReport(list(model.feature_names), float(w @ mu + model.intercept), ids, phi, mean_abs)


# --------------------------------------------------------------------------
# Error analysis
# --------------------------------------------------------------------------


def error_report(model: Model, matrix: FeatureMatrix, cohort: Cohort, threshold: float = 0.5,
                 extractor: ConceptExtractor | None = None) -> list[dict]:
    """Dossiers for misclassified patients.

    Each dossier lists the probability, the active features with their
    values and Shapley contributions, and, for text features, every located
    occurrence (negated ones included) with its sentence.
    """
    labels = {p.patient_id: p.label for p in cohort}
    patients = {p.patient_id: p for p in cohort}
    probs = np.atleast_1d(predict_proba(model, matrix.values))
    logits = np.atleast_1d(decision_function(model, matrix.values))
    attributions = shap_linear(model, None, matrix.values, matrix.patient_ids)
    X = matrix.dense()
    dossiers = []
    for i, pid in enumerate(matrix.patient_ids):
        actual = labels.get(pid)
        if actual is None:
            raise ValueError(f"patient {pid!r} has no gold label")
        predicted = bool(probs[i] >= threshold)
        if predicted == actual:
            continue
        active = [
            {"feature": name, "value": float(X[i, j]), "phi": float(attributions.contributions[i, j])}
            for j, name in enumerate(matrix.feature_names) if X[i, j] != 0
        ]
        evidence = []
        if extractor is not None and pid in patients:
            evidence = [e.to_dict() for e in extractor.evidence(patients[pid], matrix.feature_names)]
        dossiers.append({
            "patient_id": pid,
            "error": "false_positive" if predicted else "false_negative",
            "probability": float(probs[i]),
            "logit": float(logits[i]),
            "actual": actual,
            "predicted": predicted,
            "active_features": active,
            "evidence": evidence,
        })
    return dossiers


def write_errors(dossiers: Iterable[dict], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(list(dossiers), indent=2) + "\n", encoding="utf-8")
