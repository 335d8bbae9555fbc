import warnings
from datetime import date

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lnpheno.baseline import (
    BaselineRuleConfig, LabRule, UnitConversionWarning, baseline_predictions, classify_baseline, convert_unit,
)
from lnpheno.cohort import DiagnosisCode, LabResult, PatientRecord
from lnpheno.errors import ConfigError

D = date(2016, 5, 1)


def _upcr(value, unit="mg/mg"):
    return LabResult("p", D, "2890-2", "Urine protein/creatinine ratio", value, unit)


def _24h(value, unit="mg/24h"):
    return LabResult("p", D, "2889-4", "24 hour urine protein", value, unit)


@pytest.fixture(scope="module")
def rule():
    return BaselineRuleConfig.default()


class TestClassify:
    def test_icd10_code(self, rule):
        assert classify_baseline(PatientRecord("p", codes=(DiagnosisCode("p", D, "ICD10", "M32.14"),)), rule)

    def test_icd9_code_without_dot(self, rule):
        assert classify_baseline(PatientRecord("p", codes=(DiagnosisCode("p", D, "ICD9", "58381"),)), rule)

    def test_sle_code_alone_is_negative(self, rule):
        assert not classify_baseline(PatientRecord("p", codes=(DiagnosisCode("p", D, "ICD10", "M32.9"),)), rule)

    @pytest.mark.parametrize("lab,expected", [
        (_upcr(0.51), True), (_upcr(0.5), False), (_upcr(600, "mg/g"), True), (_upcr(400, "mg/g"), False),
        (_24h(501), True), (_24h(500), False), (_24h(0.8, "g/24h"), True), (_24h(0.4, "g/day"), False),
    ])
    def test_lab_thresholds(self, rule, lab, expected):
        assert classify_baseline(PatientRecord("p", labs=(lab,)), rule) is expected

    def test_unrelated_lab_ignored(self, rule):
        lab = LabResult("p", D, "2160-0", "Creatinine, serum", 9.0, "mg/dL")
        assert not classify_baseline(PatientRecord("p", labs=(lab,)), rule)

    def test_unconvertible_unit_warns_and_skips(self, rule):
        with pytest.warns(UnitConversionWarning):
            assert not classify_baseline(PatientRecord("p", labs=(_24h(900, "mmol/L"),)), rule)

    def test_empty_patient(self, rule):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert classify_baseline(PatientRecord("p"), rule) is False

    def test_predictions_map(self, rule, tiny_cohort):
        assert baseline_predictions(tiny_cohort, rule) == {"A1": True, "B2": False, "C3": False}


class TestConfig:
    def test_prefix_wildcard(self):
        cfg = BaselineRuleConfig(ln_icd10=("M32.1*",))
        assert cfg.code_matches("ICD10", "M32.19") and not cfg.code_matches("ICD10", "M32.2")

    def test_system_is_respected(self):
        cfg = BaselineRuleConfig(ln_icd9=("583.81",))
        assert not cfg.code_matches("ICD10", "583.81")

    def test_empty_rule_rejected(self):
        with pytest.raises(ConfigError):
            BaselineRuleConfig()

    def test_bad_comparator(self):
        with pytest.raises(ConfigError):
            LabRule("x", "!=", 1.0, "ratio")

    def test_malformed_json(self, tmp_path):
        (tmp_path / "b.json").write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError):
            BaselineRuleConfig.load(tmp_path / "b.json")


@given(st.floats(1e-3, 1e4), st.sampled_from(["mg/24h", "mg/day", "g/24h", "g/day"]),
       st.sampled_from(["mg/24h", "mg/d", "g/24h"]))
def test_unit_conversion_round_trip(value, a, b):
    there = convert_unit(value, a, b)
    assert convert_unit(there, b, a) == pytest.approx(value, rel=1e-12)


def test_no_conversion_across_groups():
    assert convert_unit(1.0, "mg/mg", "mg/24h") is None
