"""Stage functions shared by the command line and the test-suite.

Each stage reads and writes plain files so a run can be resumed from any
intermediate artifact: cohort JSONL -> profiles.jsonl -> matrix CSV -> model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baseline import BaselineRuleConfig, classify_baseline
from .cohort import Cohort, PatientRecord, split_cohort
from .concepts import ConceptExtractor, ConceptProfile
from .errors import DataError
from .evaluation import EvalReport, evaluate, evaluate_model
from .features import FeatureMatrix, FeaturizerConfig, build_matrix, read_matrix, write_matrix
from .glm import Model, TrainConfig, train

MODEL_KINDS = ("baseline", "binary", "count", "mixed")
SPLIT_FILE = "split.json"
TRAIN_MATRIX = "matrix_train.csv"
TEST_MATRIX = "matrix_test.csv"


def extract_profiles(cohort: Cohort, extractor: ConceptExtractor | None = None,
                     baseline_config: BaselineRuleConfig | None = None) -> list[ConceptProfile]:
    """One profile per patient, carrying the structured rule flag and the gold label."""
    extractor = extractor or ConceptExtractor()
    baseline_config = baseline_config or BaselineRuleConfig.default()
    return [extractor.profile(p, classify_baseline(p, baseline_config)) for p in cohort]


def write_profiles(profiles: Sequence[ConceptProfile], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for p in profiles:
            fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")


def read_profiles(path) -> list[ConceptProfile]:
    out = []
    if not Path(path).is_file():
        raise DataError(f"{path}: file not found")
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(ConceptProfile.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line_no}: malformed profile: {exc}") from None
    return out


def split_profiles(profiles: Sequence[ConceptProfile], train_fraction: float = 0.75, stratified: bool = True,
                   seed: int = 0) -> tuple[list[ConceptProfile], list[ConceptProfile]]:
    """Same partition :func:`split_cohort` gives for the patients behind ``profiles``."""
    stub = Cohort(tuple(PatientRecord(p.patient_id, label=p.label) for p in profiles))
    train_part, test_part = split_cohort(stub, train_fraction, stratified, seed)
    by_id = {p.patient_id: p for p in profiles}
    return [by_id[i] for i in train_part.patient_ids], [by_id[i] for i in test_part.patient_ids]


def labels_of(profiles: Sequence[ConceptProfile]) -> np.ndarray:
    missing = [p.patient_id for p in profiles if p.label is None]
    if missing:
        raise DataError(f"{len(missing)} profile(s) lack a gold label, e.g. {missing[0]!r}")
    return np.array([p.label for p in profiles], dtype=bool)


def baseline_report(profiles: Sequence[ConceptProfile]) -> EvalReport:
    """The structured rule scored as a classifier. It has no score, so no AUC."""
    flags = []
    for p in profiles:
        if p.structured_positive is None:
            raise DataError(f"profile {p.patient_id!r} lacks the structured baseline flag")
        flags.append(float(p.structured_positive))
    report = evaluate([p.patient_id for p in profiles], labels_of(profiles), flags, 0.5, with_auc=False)
    report.info["model"] = "baseline"
    return report


@dataclass
class SplitInfo:
    """Which patients train and which test, with what the later stages need of them."""
    seed: int
    train_fraction: float
    stratified: bool
    train_ids: list[str]
    test_ids: list[str]
    labels: dict[str, bool]
    structured_positive: dict[str, bool | None]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train_fraction": self.train_fraction, "stratified": self.stratified,
                "n_train": len(self.train_ids), "n_test": len(self.test_ids),
                "train_ids": self.train_ids, "test_ids": self.test_ids,
                "labels": self.labels, "structured_positive": self.structured_positive}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitInfo":
        return cls(int(d["seed"]), float(d["train_fraction"]), bool(d["stratified"]), list(d["train_ids"]),
                   list(d["test_ids"]), {k: bool(v) for k, v in d["labels"].items()},
                   dict(d["structured_positive"]))

    def summary(self) -> dict:
        return {"seed": self.seed, "train_fraction": self.train_fraction, "stratified": self.stratified,
                "n_train": len(self.train_ids), "n_test": len(self.test_ids)}


@dataclass
class FeaturizedSplit:
    kind: str
    split: SplitInfo
    train: FeatureMatrix | None = None
    test: FeatureMatrix | None = None


def featurize_split(profiles: Sequence[ConceptProfile], kind: str, seed: int = 0, train_fraction: float = 0.75,
                    stratified: bool = True, featurizer: FeaturizerConfig = FeaturizerConfig()) -> FeaturizedSplit:
    """Split the profiles and build train/test matrices.

    The column vocabulary of the binary and count matrices is chosen on the
    train part only; the test matrix reuses it.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    labels_of(profiles)
    tr, te = split_profiles(profiles, train_fraction, stratified, seed)
    split = SplitInfo(seed, train_fraction, stratified, [p.patient_id for p in tr], [p.patient_id for p in te],
                      {p.patient_id: bool(p.label) for p in profiles},
                      {p.patient_id: p.structured_positive for p in profiles})
    if kind == "baseline":
        return FeaturizedSplit(kind, split)
    train_m = build_matrix(tr, kind, featurizer)
    test_m = build_matrix(te, kind, featurizer, vocabulary=train_m.feature_names)
    return FeaturizedSplit(kind, split, train_m, test_m)


def write_featurized(fs: FeaturizedSplit, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / SPLIT_FILE).write_text(json.dumps(fs.split.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if fs.train is not None:
        write_matrix(fs.train, out / TRAIN_MATRIX)
        write_matrix(fs.test, out / TEST_MATRIX)


def read_featurized(in_dir) -> FeaturizedSplit:
    src = Path(in_dir)
    try:
        split = SplitInfo.from_dict(json.loads((src / SPLIT_FILE).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise DataError(f"{src / SPLIT_FILE} not found; run featurize first") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{src / SPLIT_FILE}: malformed split file: {exc}") from None
    if not (src / TRAIN_MATRIX).exists():
        return FeaturizedSplit("baseline", split)
    train_m, test_m = read_matrix(src / TRAIN_MATRIX), read_matrix(src / TEST_MATRIX)
    return FeaturizedSplit(train_m.kind, split, train_m, test_m)


def baseline_on_split(split: SplitInfo) -> EvalReport:
    flags = []
    for pid in split.test_ids:
        flag = split.structured_positive.get(pid)
        if flag is None:
            raise DataError(f"patient {pid!r} lacks the structured baseline flag")
        flags.append(float(flag))
    report = evaluate(split.test_ids, [split.labels[p] for p in split.test_ids], flags, 0.5, with_auc=False)
    report.info["model"] = "baseline"
    return report


@dataclass
class TrainingRun:
    kind: str
    split: SplitInfo
    report: EvalReport
    baseline: EvalReport
    model: Model | None = None
    train_matrix: FeatureMatrix | None = None
    test_matrix: FeatureMatrix | None = None


def _seeded(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, optimizer=replace(config.optimizer, seed=seed))


def fit_and_score(fs: FeaturizedSplit, train_config: TrainConfig = TrainConfig()) -> TrainingRun:
    """Grid-search and fit on the train matrix, then score the test matrix.

    The optimizer and fold seed is the split seed. The baseline rule is
    always scored on the same test patients for comparison.
    """
    base = baseline_on_split(fs.split)
    if fs.kind == "baseline":
        return TrainingRun("baseline", fs.split, base, base)
    cfg = _seeded(train_config, fs.split.seed)
    y_train = np.array([fs.split.labels[p] for p in fs.train.patient_ids], dtype=bool)
    y_test = np.array([fs.split.labels[p] for p in fs.test.patient_ids], dtype=bool)
    model = train(fs.train.values, y_train, fs.train.feature_names, cfg)
    model.metadata.update({"model_kind": fs.kind, "split": fs.split.summary(),
                           "min_doc_freq": fs.train.min_doc_freq})
    report = evaluate_model(model, fs.test, y_test, cfg.threshold)
    report.info.update({"model": fs.kind, "C": model.C, "seed": fs.split.seed})
    return TrainingRun(fs.kind, fs.split, report, base, model, fs.train, fs.test)


def run_training(profiles: Sequence[ConceptProfile], kind: str, seed: int = 0, train_fraction: float = 0.75,
                 stratified: bool = True, featurizer: FeaturizerConfig = FeaturizerConfig(),
                 train_config: TrainConfig = TrainConfig()) -> TrainingRun:
    return fit_and_score(featurize_split(profiles, kind, seed, train_fraction, stratified, featurizer), train_config)
