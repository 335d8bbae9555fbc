"""``lnpheno`` command line: synth, extract, featurize, baseline, train, validate, explain, report.

Global flags may appear before or after the subcommand. Exit status is 0 on
success, 2 for configuration errors and 3 for data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

from .baseline import BaselineRuleConfig, baseline_predictions
from .cohort import Cohort, PatientRecord, filter_min_encounters, load_cohort_dir, write_cohort
from .concepts import ConceptExtractor, Lexicon, NegationConfig, RegexConceptSet
from .errors import ConfigError, DataError
from .evaluation import error_report, evaluate, evaluate_model, rank_coefficients, shap_linear, write_errors
from .features import FeaturizerConfig, build_matrix, read_matrix, write_matrix
from .glm import DEFAULT_C_GRID, Model, SAGSettings, TrainConfig
from .pipeline import (
    MODEL_KINDS, extract_profiles, featurize_split, fit_and_score, labels_of, read_featurized, read_profiles,
    write_featurized, write_profiles,
)
from .synth import SyntheticConfig, generate_synthetic_cohort
from .textpipe import DEFAULT_ABBREVIATIONS, load_abbreviations

log = logging.getLogger("lnpheno")

PROFILES_FILE = "profiles.jsonl"
_KIND_ALIASES = {"metamap_binary": "binary", "metamap_count": "count", "metamap_mixed": "mixed"}
_PATH_KEYS = ("data_dir", "profiles", "lexicon", "negation", "regex", "abbreviations", "baseline")


@dataclass
class RunConfig:
    """Everything a run needs. Loaded from ``--config`` JSON, then overridden by flags."""
    model_kind: str = "mixed"
    seed: int = 0
    out_dir: Path = Path("out")
    data_dir: Path | None = None
    profiles: Path | None = None
    lexicon: Path | None = None
    negation: Path | None = None
    regex: Path | None = None
    abbreviations: Path | None = None
    baseline: Path | None = None
    min_encounters: int = 0
    train_fraction: float = 0.75
    stratified: bool = True
    min_doc_freq_binary: int = 30
    min_doc_freq_count: int = 40
    C_grid: tuple[float, ...] = DEFAULT_C_GRID
    cv_folds: int = 5
    class_weight: str = "balanced"
    max_epochs: int = 1000
    tolerance: float = 1e-4
    threshold: float = 0.5
    synthetic: dict = field(default_factory=dict)

    def __post_init__(self):
        self.model_kind = _KIND_ALIASES.get(self.model_kind, self.model_kind)
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model kind must be one of {', '.join(MODEL_KINDS)}; got {self.model_kind!r}")
        for key in ("lexicon", "negation", "regex", "abbreviations", "baseline"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{key} file {path} does not exist")
        if self.min_encounters < 0:
            raise ConfigError("min_encounters must be >= 0")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown key(s): {', '.join(unknown)}")
        for key in _PATH_KEYS + ("out_dir",):
            if raw.get(key) is not None:
                raw[key] = path.parent / raw[key]
        if "C_grid" in raw:
            raw["C_grid"] = tuple(float(c) for c in raw["C_grid"])
        return cls(**raw)

    def featurizer(self) -> FeaturizerConfig:
        return FeaturizerConfig(self.min_doc_freq_binary, self.min_doc_freq_count)

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(tuple(self.C_grid), self.class_weight,
                               SAGSettings(self.max_epochs, self.tolerance, self.seed), self.cv_folds, self.threshold)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def baseline_config(self) -> BaselineRuleConfig:
        return BaselineRuleConfig.load(self.baseline) if self.baseline else BaselineRuleConfig.default()

    def extractor(self) -> ConceptExtractor:
        return ConceptExtractor(
            Lexicon.load(self.lexicon) if self.lexicon else None,
            RegexConceptSet.load(self.regex) if self.regex else None,
            NegationConfig.load(self.negation) if self.negation else None,
            load_abbreviations(self.abbreviations) if self.abbreviations else DEFAULT_ABBREVIATIONS,
        )

    def synthetic_config(self) -> SyntheticConfig:
        try:
            return SyntheticConfig.from_dict({**self.synthetic, "seed": self.seed})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synthetic config: {exc}") from None


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_data(cfg: RunConfig) -> Cohort:
    if cfg.data_dir is None:
        raise ConfigError("no cohort directory given (--data)")
    cohort = load_cohort_dir(cfg.data_dir)
    kept = filter_min_encounters(cohort, cfg.min_encounters)
    if len(kept) < len(cohort):
        log.info("dropped %d patient(s) with < %d encounters", len(cohort) - len(kept), cfg.min_encounters)
    return kept


def _profiles(cfg: RunConfig):
    """Profiles from ``--profiles`` if given, else extracted from ``--data``; plus the cohort if loaded."""
    if cfg.profiles is not None:
        return read_profiles(cfg.profiles), None
    cohort = _load_data(cfg)
    return extract_profiles(cohort, cfg.extractor(), cfg.baseline_config()), cohort


def _stub_cohort(labels: dict[str, bool]) -> Cohort:
    return Cohort(tuple(PatientRecord(pid, label=lab) for pid, lab in sorted(labels.items())))


def _print_metrics(name: str, row: dict) -> None:
    cells = " ".join(f"{k}={'NA' if v is None else f'{v:.2f}'}" for k, v in row.items())
    print(f"{name}: {cells}")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> None:
    syn = cfg.synthetic_config()
    if args.n_patients is not None:
        syn = SyntheticConfig.from_dict({**cfg.synthetic, "seed": cfg.seed, "n_patients": args.n_patients})
    cohort = generate_synthetic_cohort(syn)
    try:
        write_cohort(cohort, cfg.out_dir)
    except OSError as exc:
        raise DataError(f"cannot write to {cfg.out_dir}: {exc}") from None
    log.info("wrote %d synthetic patients to %s", len(cohort), cfg.out_dir)


def cmd_extract(cfg: RunConfig, args) -> None:
    cohort = _load_data(cfg)
    profiles = extract_profiles(cohort, cfg.extractor(), cfg.baseline_config())
    write_profiles(profiles, cfg.out_dir / PROFILES_FILE)
    log.info("wrote %d profiles to %s", len(profiles), cfg.out_dir / PROFILES_FILE)


def cmd_featurize(cfg: RunConfig, args) -> None:
    profiles, _ = _profiles(cfg)
    fs = featurize_split(profiles, cfg.model_kind, cfg.seed, cfg.train_fraction, cfg.stratified, cfg.featurizer())
    write_featurized(fs, cfg.out_dir)
    if fs.train is not None:
        log.info("%s matrices: %d train / %d test patients, %d features", fs.kind, fs.train.shape[0],
                 fs.test.shape[0], fs.train.shape[1])


def cmd_baseline(cfg: RunConfig, args) -> None:
    """Score the structured rule on every labeled patient of the cohort."""
    if cfg.profiles is not None:
        profiles = read_profiles(cfg.profiles)
        flags = {p.patient_id: p.structured_positive for p in profiles}
        labels = dict(zip((p.patient_id for p in profiles), labels_of(profiles).tolist()))
    else:
        cohort = _load_data(cfg)
        flags = baseline_predictions(cohort, cfg.baseline_config())
        labels = {p.patient_id: p.label for p in cohort}
    _dump({"predictions": dict(sorted(flags.items()))}, cfg.out_dir / "baseline_predictions.json")
    if any(v is None for v in labels.values()):
        log.info("unlabeled patients present; predictions written without evaluation")
        return
    ids = sorted(labels)
    report = evaluate(ids, [labels[i] for i in ids], [float(bool(flags[i])) for i in ids], 0.5, with_auc=False)
    report.info["model"] = "baseline"
    report.save(cfg.out_dir / "report.json")
    _print_metrics("baseline", report.metric_row())


def cmd_train(cfg: RunConfig, args) -> None:
    cohort = None
    if args.matrices is not None:
        fs = read_featurized(args.matrices)
        if fs.kind != cfg.model_kind:
            raise ConfigError(f"{args.matrices} holds {fs.kind} matrices but --model is {cfg.model_kind}")
    else:
        profiles, cohort = _profiles(cfg)
        fs = featurize_split(profiles, cfg.model_kind, cfg.seed, cfg.train_fraction, cfg.stratified,
                             cfg.featurizer())
    run = fit_and_score(fs, cfg.train_config())
    out = cfg.out_dir
    write_featurized(fs, out)
    report = run.report.to_dict()
    report["split"] = run.split.summary()
    report["baseline_on_same_split"] = run.baseline.to_dict() | {"per_patient": []}
    if run.model is not None:
        run.model.save(out / "model.json")
        report["top_coefficients"] = [list(p) for p in rank_coefficients(run.model, min(5, len(run.model.weights)))]
        if cohort is None:
            cohort = _stub_cohort(run.split.labels)
        dossiers = error_report(run.model, run.test_matrix, cohort.subset(run.test_matrix.patient_ids),
                                cfg.threshold, cfg.extractor())
        write_errors(dossiers, out / "errors.json")
    _dump(report, out / "report.json")
    _print_metrics(cfg.model_kind, run.report.metric_row())
    if run.model is not None:
        _print_metrics("baseline (same split)", run.baseline.metric_row())
        log.info("chosen C=%g", run.model.C)


def cmd_validate(cfg: RunConfig, args) -> None:
    """Apply a saved model to another cohort without retraining."""
    model = _load_model(args.model_path)
    kind = model.metadata.get("model_kind")
    if kind not in ("binary", "count", "mixed"):
        raise DataError(f"{args.model_path}: metadata lacks a usable model_kind")
    profiles, cohort = _profiles(cfg)
    matrix = build_matrix(profiles, kind, cfg.featurizer(), vocabulary=model.feature_names)
    report = evaluate_model(model, matrix, labels_of(profiles), cfg.threshold)
    report.info.update({"model": kind, "C": model.C, "validated_model": str(args.model_path)})
    for w in report.warnings:
        log.warning("%s", w)
    report.save(cfg.out_dir / "report.json")
    _print_metrics(f"{kind} (external)", report.metric_row())


def cmd_explain(cfg: RunConfig, args) -> None:
    model = _load_model(args.model_path)
    matrix = read_matrix(args.matrix)
    if list(matrix.feature_names) != list(model.feature_names):
        raise DataError(f"{args.matrix}: columns do not match the model's features")
    attributions = shap_linear(model, None, matrix.values, matrix.patient_ids)
    attributions.write(cfg.out_dir)
    for name, value in attributions.ranking()[:5]:
        print(f"{name}\t{value:.4f}")


def cmd_report(cfg: RunConfig, args) -> None:
    """Print report.json files as a two-decimal table and save it as TSV."""
    paths = args.reports or [cfg.out_dir / "report.json"]
    cols = ("sensitivity", "specificity", "ppv", "npv", "f_measure", "auc")
    lines = ["\t".join(("report", "model", *cols))]
    for path in paths:
        try:
            rep = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"report {path} not found") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc.msg}") from None
        cells = ["NA" if rep.get(c) is None else f"{rep[c]:.2f}" for c in cols]
        lines.append("\t".join((str(path), str(rep.get("model", "?")), *cells)))
    table = "\n".join(lines) + "\n"
    sys.stdout.write(table)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "table.tsv").write_text(table, encoding="utf-8")


def _load_model(path) -> Model:
    if path is None:
        raise ConfigError("--model-path is required")
    try:
        return Model.load(path)
    except FileNotFoundError:
        raise DataError(f"model file {path} not found") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: unreadable model: {exc}") from None


COMMANDS = {
    "synth": cmd_synth, "extract": cmd_extract, "featurize": cmd_featurize, "baseline": cmd_baseline,
    "train": cmd_train, "validate": cmd_validate, "explain": cmd_explain, "report": cmd_report,
}


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _add_global_flags(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--seed", type=int, default=default, help="random seed for split, folds, SAG and synth")
    p.add_argument("--config", type=Path, default=default, help="run configuration JSON")
    p.add_argument("--out", type=Path, default=default, help="output directory")
    p.add_argument("--model", choices=[*MODEL_KINDS, *_KIND_ALIASES], default=default, help="model kind")
    p.add_argument("--data", type=Path, default=default, help="cohort directory of JSONL files")
    p.add_argument("--profiles", type=Path, default=default, help="profiles.jsonl from extract")
    p.add_argument("--min-encounters", type=int, default=default, help="drop patients with fewer encounters")
    p.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lnpheno", description="Lupus nephritis phenotyping from clinical notes.")
    _add_global_flags(parser, None)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic cohort",
        "extract": "extract concept profiles from a cohort",
        "featurize": "split profiles and write train/test feature matrices",
        "baseline": "score the structured-data rule",
        "train": "grid-search, fit and evaluate on the held-out split",
        "validate": "apply a saved model to an external cohort",
        "explain": "Shapley attributions for a feature matrix",
        "report": "tabulate report.json files",
    }
    subs = {}
    for name, text in helps.items():
        subs[name] = sub.add_parser(name, help=text)
        _add_global_flags(subs[name], argparse.SUPPRESS)
    subs["synth"].add_argument("--n-patients", type=int, default=None)
    subs["train"].add_argument("--matrices", type=Path, default=None, help="directory written by featurize")
    for name in ("validate", "explain"):
        subs[name].add_argument("--model-path", type=Path, required=True)
    subs["explain"].add_argument("--matrix", type=Path, required=True, help="triplet CSV with .json sidecar")
    subs["report"].add_argument("reports", nargs="*", type=Path)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {"seed": args.seed, "out_dir": args.out, "model_kind": args.model, "data_dir": args.data,
                 "profiles": args.profiles, "min_encounters": args.min_encounters}
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.__post_init__()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            logging.captureWarnings(True)
            COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    finally:
        logging.captureWarnings(False)
    return 0


if __name__ == "__main__":
    sys.exit(main())
