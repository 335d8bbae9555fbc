"""Structured-data rule: lupus nephritis diagnosis codes or proteinuria labs."""

from __future__ import annotations

import json
import operator
import re
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .cohort import Cohort, LabResult, PatientRecord
from .errors import ConfigError

COMPARATORS = {">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le}

# factor converting a value in the keyed unit to the canonical unit of its group
_UNIT_GROUPS = {
    "ratio": {"ratio": 1.0, "mg/mg": 1.0, "g/g": 1.0, "mg/g": 1e-3, "mg/mmol": 1.0 / 113.12},
    "mg/24h": {"mg/24h": 1.0, "mg/day": 1.0, "mg/d": 1.0, "g/24h": 1e3, "g/day": 1e3, "g/d": 1e3},
}


class UnitConversionWarning(UserWarning):
    """A lab row was skipped because its unit cannot be converted."""


def normalize_unit(unit: str) -> str:
    u = unit.strip().lower().replace(" ", "")
    u = re.sub(r"24-?h(?:rs?|ours?)?$", "24h", u)
    return u


def convert_unit(value: float, from_unit: str, to_unit: str) -> float | None:
    """Convert between units of one group; ``None`` when no conversion exists."""
    src, dst = normalize_unit(from_unit), normalize_unit(to_unit)
    for table in _UNIT_GROUPS.values():
        if src in table and dst in table:
            return value * table[src] / table[dst]
    return None


@dataclass(frozen=True)
class LabRule:
    name_pattern: str
    comparator: str
    threshold: float
    unit: str

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise ConfigError(f"unsupported comparator {self.comparator!r}")
        try:
            object.__setattr__(self, "_regex", re.compile(self.name_pattern, re.IGNORECASE))
        except re.error as exc:
            raise ConfigError(f"lab rule pattern {self.name_pattern!r}: {exc}") from None

    def applies_to(self, lab: LabResult) -> bool:
        return bool(self._regex.search(lab.name) or self._regex.search(lab.code))

    def satisfied_by(self, lab: LabResult) -> bool:
        if not self.applies_to(lab):
            return False
        value = convert_unit(lab.value, lab.unit, self.unit)
        if value is None:
            warnings.warn(
                f"skipping lab {lab.name!r} for {lab.patient_id}: unit {lab.unit!r} "
                f"is not convertible to {self.unit!r}",
                UnitConversionWarning,
                stacklevel=3,
            )
            return False
        return COMPARATORS[self.comparator](value, self.threshold)


def _normalize_code(code: str) -> str:
    return code.strip().upper().replace(".", "")


@dataclass(frozen=True)
class BaselineRuleConfig:
    ln_icd9: tuple[str, ...] = ()
    ln_icd10: tuple[str, ...] = ()
    lab_rules: tuple[LabRule, ...] = ()

    def __post_init__(self):
        if not (self.ln_icd9 or self.ln_icd10 or self.lab_rules):
            raise ConfigError("baseline rule needs at least one code pattern or lab rule")

    @classmethod
    def from_dict(cls, d: Mapping) -> "BaselineRuleConfig":
        try:
            rules = tuple(
                LabRule(r["name_pattern"], r.get("comparator", ">"), float(r["threshold"]), r["unit"])
                for r in d.get("lab_rules", ())
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed lab rule: {exc}") from None
        return cls(tuple(d.get("ln_icd9", ())), tuple(d.get("ln_icd10", ())), rules)

    @classmethod
    def load(cls, path) -> "BaselineRuleConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from None

    @classmethod
    def default(cls) -> "BaselineRuleConfig":
        return cls.load(Path(str(resources.files("lnpheno") / "data" / "baseline.json")))

    def code_matches(self, system: str, code: str) -> bool:
        patterns = self.ln_icd9 if system == "ICD9" else self.ln_icd10 if system == "ICD10" else ()
        c = _normalize_code(code)
        for pat in patterns:
            p = _normalize_code(pat)
            if p.endswith("*"):
                if c.startswith(p[:-1]):
                    return True
            elif c == p:
                return True
        return False


def classify_baseline(patient: PatientRecord, config: BaselineRuleConfig) -> bool:
    """True when any diagnosis code or lab row satisfies the rule set.

    Codes compare without dots and case-insensitively; a trailing ``*`` is
    a prefix wildcard. Lab rows whose unit cannot be converted are skipped
    with a :class:`UnitConversionWarning`.
    """
    if any(config.code_matches(c.system, c.code) for c in patient.codes):
        return True
    return any(rule.satisfied_by(lab) for lab in patient.labs for rule in config.lab_rules)


def baseline_predictions(cohort: Cohort | Sequence[PatientRecord], config: BaselineRuleConfig) -> dict[str, bool]:
    return {p.patient_id: classify_baseline(p, config) for p in cohort}
