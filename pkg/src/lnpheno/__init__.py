"""Lupus nephritis phenotyping from clinical notes and structured data."""

from .baseline import BaselineRuleConfig, classify_baseline
from .cohort import Cohort, PatientRecord, filter_min_encounters, load_cohort, split_cohort
from .concepts import ConceptExtractor, ConceptProfile, Lexicon, NegationConfig, RegexConceptSet
from .errors import ConfigError, DataError, LNPhenoError
from .evaluation import confusion, error_report, metrics, rank_coefficients, roc_auc, shap_linear
from .features import FeaturizerConfig, build_binary_matrix, build_count_matrix, build_mixed_matrix
from .glm import Model, TrainConfig, fit_sag, grid_search, predict_proba, train
from .synth import SyntheticConfig, generate_synthetic_cohort

__version__ = "0.1.0"

__all__ = [
    "BaselineRuleConfig", "Cohort", "ConceptExtractor", "ConceptProfile", "ConfigError", "DataError",
    "FeaturizerConfig", "LNPhenoError", "Lexicon", "Model", "NegationConfig", "PatientRecord", "RegexConceptSet",
    "SyntheticConfig", "TrainConfig", "build_binary_matrix", "build_count_matrix", "build_mixed_matrix",
    "classify_baseline", "confusion", "error_report", "filter_min_encounters", "fit_sag", "generate_synthetic_cohort",
    "grid_search", "load_cohort", "metrics", "predict_proba", "rank_coefficients", "roc_auc", "shap_linear",
    "split_cohort", "train",
]
