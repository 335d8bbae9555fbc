import json

import pytest

from lnpheno.cli import RunConfig, main
from lnpheno.cohort import write_cohort
from lnpheno.errors import ConfigError
from lnpheno.glm import Model
from lnpheno.pipeline import (
    SplitInfo, featurize_split, fit_and_score, read_featurized, read_profiles, run_training, write_featurized,
    write_profiles,
)
from lnpheno.synth import SyntheticConfig, generate_synthetic_cohort


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A synthetic cohort plus extracted profiles, shared across the module."""
    root = tmp_path_factory.mktemp("cli")
    assert _run("synth", "--n-patients", 240, "--seed", 2, "--out", root / "data",
                "--config", _small_notes_config(root)) == 0
    assert _run("extract", "--data", root / "data", "--out", root / "prof") == 0
    return root


def _small_notes_config(root):
    path = root / "synth.json"
    path.write_text(json.dumps({"synthetic": {"note_count_mean": 10, "note_count_sd": 6}}))
    return path


class TestExitCodes:
    def test_missing_data_dir(self, tmp_path):
        assert _run("extract", "--data", tmp_path / "nope", "--out", tmp_path) == 3

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "c.json").write_text('{"colour": "red"}')
        assert _run("--config", tmp_path / "c.json", "train", "--out", tmp_path) == 2

    def test_missing_config_file(self, tmp_path):
        assert _run("train", "--config", tmp_path / "none.json") == 2

    def test_bad_model_kind(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--model", "forest"])
        assert exc.value.code == 2

    def test_missing_model_file(self, tmp_path, workdir):
        assert _run("validate", "--model-path", tmp_path / "m.json", "--profiles",
                    workdir / "prof" / "profiles.jsonl", "--out", tmp_path) == 3

    def test_report_missing(self, tmp_path):
        assert _run("report", tmp_path / "r.json", "--out", tmp_path) == 3


class TestConfig:
    def test_paths_resolve_next_to_file(self, tmp_path):
        (tmp_path / "c.json").write_text('{"data_dir": "cohort", "out_dir": "o", "model_kind": "metamap_count"}')
        cfg = RunConfig.from_file(tmp_path / "c.json")
        assert cfg.data_dir == tmp_path / "cohort" and cfg.out_dir == tmp_path / "o" and cfg.model_kind == "count"

    def test_missing_lexicon_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig(lexicon=tmp_path / "lex.tsv")

    def test_bad_grid(self):
        with pytest.raises(ConfigError):
            RunConfig(C_grid=()).train_config()

    def test_flags_after_subcommand_override_config(self, tmp_path):
        (tmp_path / "c.json").write_text('{"seed": 5}')
        out = tmp_path / "o"
        assert _run("synth", "--config", tmp_path / "c.json", "--seed", 6, "--n-patients", 3, "--out", out) == 0
        write_cohort(generate_synthetic_cohort(SyntheticConfig(n_patients=3, seed=6)), tmp_path / "expect")
        assert (out / "notes.jsonl").read_bytes() == (tmp_path / "expect" / "notes.jsonl").read_bytes()

    def test_synth_zero_patients(self, tmp_path):
        assert _run("synth", "--n-patients", 0, "--out", tmp_path) == 0
        assert all(f.read_text() == "" for f in tmp_path.glob("*.jsonl"))


class TestPipeline:
    def test_extract_writes_one_profile_per_patient(self, workdir):
        profiles = read_profiles(workdir / "prof" / "profiles.jsonl")
        assert len(profiles) == 240 and all(p.label is not None for p in profiles)

    def test_staged_equals_raw(self, workdir, tmp_path):
        prof = workdir / "prof" / "profiles.jsonl"
        assert _run("featurize", "--profiles", prof, "--model", "mixed", "--seed", 1, "--out", tmp_path / "m") == 0
        assert _run("train", "--matrices", tmp_path / "m", "--model", "mixed", "--seed", 1,
                    "--out", tmp_path / "staged") == 0
        assert _run("train", "--data", workdir / "data", "--model", "mixed", "--seed", 1,
                    "--out", tmp_path / "raw") == 0
        for name in ("model.json", "split.json", "matrix_train.csv", "matrix_test.csv"):
            assert (tmp_path / "staged" / name).read_bytes() == (tmp_path / "raw" / name).read_bytes(), name
        staged = json.loads((tmp_path / "staged" / "report.json").read_text())
        raw = json.loads((tmp_path / "raw" / "report.json").read_text())
        assert {k: v for k, v in staged.items() if k != "per_patient"} == \
            {k: v for k, v in raw.items() if k != "per_patient"}

    def test_kind_mismatch_with_matrices(self, workdir, tmp_path):
        _run("featurize", "--profiles", workdir / "prof" / "profiles.jsonl", "--model", "mixed", "--out", tmp_path)
        assert _run("train", "--matrices", tmp_path, "--model", "count", "--out", tmp_path / "t") == 2

    @pytest.mark.parametrize("kind", ["binary", "count"])
    def test_text_models_train(self, workdir, tmp_path, kind):
        assert _run("train", "--profiles", workdir / "prof" / "profiles.jsonl", "--model", kind,
                    "--out", tmp_path) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["model"] == kind and report["n"] == 60
        assert report["baseline_on_same_split"]["n"] == 60
        assert report["auc"] > 0.7
        model = Model.load(tmp_path / "model.json")
        assert model.metadata["model_kind"] == kind
        assert model.C in [r["C"] for r in model.metadata["cv_accuracy_table"]]
        assert isinstance(json.loads((tmp_path / "errors.json").read_text()), list)

    def test_baseline_command(self, workdir, tmp_path):
        assert _run("baseline", "--data", workdir / "data", "--out", tmp_path) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["n"] == 240 and report["auc"] is None
        preds = json.loads((tmp_path / "baseline_predictions.json").read_text())["predictions"]
        assert len(preds) == 240

    def test_explain_top_feature(self, workdir, tmp_path, capsys):
        prof = workdir / "prof" / "profiles.jsonl"
        assert _run("train", "--profiles", prof, "--model", "binary", "--out", tmp_path) == 0
        capsys.readouterr()
        assert _run("explain", "--model-path", tmp_path / "model.json", "--matrix", tmp_path / "matrix_test.csv",
                    "--out", tmp_path / "shap") == 0
        top = capsys.readouterr().out.splitlines()[0].split("\t")[0]
        assert top == "C0024143"
        assert (tmp_path / "shap" / "attributions.csv").exists()

    def test_validate_external_cohort(self, workdir, tmp_path, caplog):
        assert _run("train", "--profiles", workdir / "prof" / "profiles.jsonl", "--model", "count",
                    "--out", tmp_path / "t") == 0
        model = Model.load(tmp_path / "t" / "model.json")
        widened = Model([*model.feature_names, "C_NOT_SEEN"], [*model.weights, 0.5], model.intercept, model.C,
                        [*model.feature_means, 0.0], model.metadata)
        widened.save(tmp_path / "wide.json")

        ext = generate_synthetic_cohort(SyntheticConfig(n_patients=50, seed=77, note_count_mean=10, note_count_sd=6))
        write_cohort(ext, tmp_path / "ext")
        assert _run("validate", "--model-path", tmp_path / "wide.json", "--data", tmp_path / "ext",
                    "--out", tmp_path / "v") == 0
        report = json.loads((tmp_path / "v" / "report.json").read_text())
        assert report["n"] == 50
        assert any("C_NOT_SEEN" in w for w in report["warnings"])
        assert any("C_NOT_SEEN" in r.getMessage() and r.levelname == "WARNING" for r in caplog.records)

    def test_report_table(self, workdir, tmp_path, capsys):
        assert _run("baseline", "--data", workdir / "data", "--out", tmp_path / "b") == 0
        capsys.readouterr()
        assert _run("report", tmp_path / "b" / "report.json", "--out", tmp_path) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split("\t") == ["report", "model", "sensitivity", "specificity", "ppv", "npv",
                                        "f_measure", "auc"]
        row = lines[1].split("\t")
        assert row[1] == "baseline" and row[-1] == "NA" and all(len(c.split(".")[1]) == 2 for c in row[2:-1])
        assert (tmp_path / "table.tsv").read_text().splitlines() == lines


class TestPipelineModule:
    def test_featurized_round_trip(self, workdir, tmp_path):
        profiles = read_profiles(workdir / "prof" / "profiles.jsonl")
        fs = featurize_split(profiles, "mixed", seed=3)
        write_featurized(fs, tmp_path)
        back = read_featurized(tmp_path)
        assert back.kind == "mixed" and back.split == fs.split
        assert fit_and_score(back).report.to_dict() == fit_and_score(fs).report.to_dict()

    def test_split_is_disjoint_and_covers(self, workdir):
        profiles = read_profiles(workdir / "prof" / "profiles.jsonl")
        split = featurize_split(profiles, "baseline", seed=0).split
        assert not set(split.train_ids) & set(split.test_ids)
        assert len(split.train_ids) + len(split.test_ids) == len(profiles)
        assert SplitInfo.from_dict(split.to_dict()) == split

    def test_vocabulary_from_train_only(self, tmp_path):
        from lnpheno.concepts import ConceptProfile
        from lnpheno.features import FeaturizerConfig
        profiles = [ConceptProfile(f"p{i}", {"C1": 1} if i % 2 else {}, {}, False, bool(i % 2)) for i in range(20)]
        fs = featurize_split(profiles, "binary", seed=0, featurizer=FeaturizerConfig(1, 1))
        assert fs.train.feature_names == fs.test.feature_names == ["C1"]

    def test_baseline_run_has_no_model(self, workdir, tmp_path):
        profiles = read_profiles(workdir / "prof" / "profiles.jsonl")
        run = run_training(profiles, "baseline")
        assert run.model is None and run.report.auc is None and run.report.confusion.total == 60
        write_profiles(profiles, tmp_path / "p.jsonl")
        assert read_profiles(tmp_path / "p.jsonl") == profiles
