"""Synthetic SLE cohorts with planted lupus nephritis signal.

Every patient gets a log-normally distributed number of short notes made of
filler sentences. Concept sentences are planted per ``signal_strengths``:
each concept maps to ``(P(present | case), P(present | control))``. Cases
that are not "evidence carriers" (``1 - note_evidence_rate`` of them) use the
control probabilities, so their notes look like a control's. Negated
distractor sentences go to patients of both classes alike.

Structured data is degraded on purpose: a ``missing_lab_rate`` fraction of
cases has no proteinuria lab rows at all, and some controls carry
proteinuria labs above threshold or a lupus nephritis code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from datetime import date, timedelta
from typing import Mapping

import numpy as np

from .cohort import ClinicalNote, Cohort, DiagnosisCode, LabResult, PatientRecord, distinct_note_dates

CONCEPT_SENTENCES: dict[str, tuple[str, ...]] = {
    # curated lupus nephritis concepts
    "C0024143": ("History of lupus nephritis.", "Lupus nephritis followed by nephrology.",
                 "Assessment: SLE complicated by lupus nephritis."),
    "C0027697": ("Active nephritis on recent urinalysis.", "Nephritis flare last year."),
    "C0017658": ("Biopsy showed glomerulonephritis.",),
    "C0022658": ("Followed for kidney disease.", "Renal disease monitored closely."),
    "C0022646": ("Kidney function reviewed with patient.", "Kidneys normal in size on ultrasound."),
    "C0033687": ("Persistent proteinuria noted.", "Proteinuria improving on current regimen."),
    "C1962972": ("Urine protein elevated on dipstick.",),
    "C0268757": ("Focal proliferative lupus nephritis on prior biopsy.",),
    "C0268758": ("Diffuse proliferative lupus nephritis on biopsy.",),
    "C4053955": ("Renal biopsy consistent with lupus nephritis class IV.",),
    "C4053958": ("Membranous lupus nephritis on biopsy.",),
    "C4053959": ("Mesangial proliferative lupus nephritis.",),
    "C4054543": ("Advanced sclerosing lupus nephritis.",),
    # regex concepts
    "nephritis_class_II": ("Prior biopsy showed stage 2 LN.", "Biopsy: ISN/RPS class II."),
    "nephritis_class_III": ("Biopsy: ISN/RPS class III.", "Class 3 LN per pathology."),
    "nephritis_class_IV": ("Biopsy: ISN/RPS class IV.", "Pathology read as WHO class IV."),
    "nephritis_class_V": ("Biopsy: ISN/RPS class V.", "LN class V on repeat biopsy."),
    "proteinuria": ("Proteinuria>0.5 gm on last check.", "Urine protein 1.2 g/day.",
                    "Collection showed 800 mg/24h protein."),
    # general concepts
    "C0024141": ("Systemic lupus erythematosus, stable.", "SLE diagnosed in the past."),
    "C0020538": ("Hypertension, on lisinopril.", "HTN controlled."),
    "C0003862": ("Reports joint pain in hands.", "Arthralgias in knees."),
    "C0003864": ("Inflammatory arthritis of wrists.",),
    "C0015230": ("Malar rash present.",),
    "C0002871": ("Mild anemia on CBC.",),
    "C0015672": ("Ongoing fatigue.",),
    "C0013604": ("Trace edema of ankles.",),
    "C0018681": ("Intermittent headaches.",),
    "C0015967": ("Low grade fever last week.",),
    "C0040034": ("Chronic thrombocytopenia.",),
    "C0023530": ("Mild leukopenia.",),
    "C0032227": ("Small pleural effusion on imaging.",),
    "C0020336": ("Continues hydroxychloroquine 200 mg daily.", "Plaquenil refilled."),
    "C0032952": ("Prednisone 5 mg daily.", "Prednisone taper discussed."),
    "C0010583": ("Completed cyclophosphamide induction.",),
    "C0005558": ("Biopsy reviewed with pathology.",),
}

NEGATED_DISTRACTORS = (
    "No glomerulonephritis.",
    "No evidence of lupus nephritis.",
    "Denies proteinuria.",
    "negative renal disorder: either persistent proteinuria (>0.5g/day or +++) or cellular casts.",
    "Lupus nephritis was ruled out.",
    "No proteinuria>0.5 gm on repeat testing.",
    "Biopsy without nephritis.",
)

FILLER_SENTENCES = (
    "Patient seen in clinic today.", "Vitals reviewed.", "Follow up in 3 months.", "Labs drawn today.",
    "Medications reconciled.", "Discussed plan with patient.", "Patient tolerating medications well.",
    "Sleep and appetite are good.", "Return precautions reviewed.", "Immunizations up to date.",
    "Will continue current management.", "Seen with attending physician.", "Counseled on sun protection.",
    "Patient works full time.", "Questions answered.", "Plan: continue therapy and recheck labs.",
    "Telephone encounter regarding refill.", "Interval history obtained.", "Physical exam performed.",
    "Blood pressure 128/76.", "Weight stable since last visit.", "Reviewed outside records.",
)

DEPARTMENTS = ("rheumatology", "nephrology", "transplant")
NOTE_TYPES = ("progress note", "consult note", "pathology report", "discharge summary")

DEFAULT_SIGNALS: dict[str, tuple[float, float]] = {
    "C0024143": (0.85, 0.08),
    "C0027697": (0.35, 0.08),
    "C0017658": (0.30, 0.04),
    "C0022658": (0.45, 0.15),
    "C0022646": (0.55, 0.35),
    "C0033687": (0.60, 0.20),
    "C1962972": (0.35, 0.15),
    "C0268757": (0.12, 0.01),
    "C0268758": (0.12, 0.01),
    "C4053955": (0.30, 0.01),
    "C4053958": (0.12, 0.01),
    "C4053959": (0.08, 0.01),
    "C4054543": (0.03, 0.00),
    "nephritis_class_II": (0.12, 0.01),
    "nephritis_class_III": (0.25, 0.01),
    "nephritis_class_IV": (0.40, 0.02),
    "nephritis_class_V": (0.18, 0.01),
    "proteinuria": (0.55, 0.08),
    "C0024141": (0.97, 0.97),
    "C0020538": (0.50, 0.35),
    "C0003862": (0.60, 0.65),
    "C0003864": (0.35, 0.40),
    "C0015230": (0.40, 0.45),
    "C0002871": (0.45, 0.35),
    "C0015672": (0.55, 0.55),
    "C0013604": (0.40, 0.20),
    "C0018681": (0.30, 0.30),
    "C0015967": (0.25, 0.25),
    "C0040034": (0.20, 0.15),
    "C0023530": (0.25, 0.25),
    "C0032227": (0.15, 0.12),
    "C0020336": (0.90, 0.90),
    "C0032952": (0.75, 0.55),
    "C0010583": (0.30, 0.03),
    "C0005558": (0.55, 0.20),
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int = 472
    prevalence: float = 0.377
    note_count_mean: float = 68.58
    note_count_sd: float = 59.37
    signal_strengths: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_SIGNALS))
    missing_lab_rate: float = 0.30
    seed: int = 0
    note_evidence_rate: float = 0.90
    case_lab_positive_rate: float = 0.80
    control_lab_positive_rate: float = 0.30
    case_code_rate: float = 0.20
    control_code_rate: float = 0.05
    negated_distractor_rate: float = 0.35
    duplicate_note_rate: float = 0.02
    mentions_per_concept: float = 2.0
    filler_sentences_per_note: int = 3

    def __post_init__(self):
        if self.n_patients < 0:
            raise ValueError("n_patients must be >= 0")
        if not 0 < self.prevalence < 1:
            raise ValueError("prevalence must lie in (0, 1)")
        if self.note_count_mean <= 0 or self.note_count_sd < 0:
            raise ValueError("note_count_mean must be > 0 and note_count_sd >= 0")
        rates = [self.missing_lab_rate, self.note_evidence_rate, self.case_lab_positive_rate,
                 self.control_lab_positive_rate, self.case_code_rate, self.control_code_rate,
                 self.negated_distractor_rate, self.duplicate_note_rate]
        rates += [p for pair in self.signal_strengths.values() for p in pair]
        if any(not 0 <= r <= 1 for r in rates):
            raise ValueError("all probabilities and rates must lie in [0, 1]")
        unknown = sorted(set(self.signal_strengths) - set(CONCEPT_SENTENCES))
        if unknown:
            raise ValueError(f"no sentence templates for concept(s): {', '.join(unknown)}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known - {"_comment"})
        if extra:
            raise ValueError(f"unknown synthetic config key(s): {', '.join(extra)}")
        kwargs = {k: v for k, v in d.items() if k in known}
        if "signal_strengths" in kwargs:
            kwargs["signal_strengths"] = {k: (float(a), float(b)) for k, (a, b) in kwargs["signal_strengths"].items()}
        return cls(**kwargs)


def lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    """(mu, sigma) of the log-normal with the given arithmetic mean and SD."""
    sigma2 = math.log1p((sd / mean) ** 2)
    return math.log(mean) - sigma2 / 2, math.sqrt(sigma2)


_EPOCH = date(2008, 1, 1)
_SPAN_DAYS = 12 * 365


def _proteinuria_labs(rng, pid, positive: bool, when: date) -> list[LabResult]:
    if rng.random() < 0.7:
        value = rng.uniform(0.6, 3.5) if positive else rng.uniform(0.05, 0.45)
        return [LabResult(pid, when, "2890-2", "Urine protein/creatinine ratio", round(value, 2), "mg/mg")]
    value = rng.uniform(650, 3500) if positive else rng.uniform(40, 400)
    return [LabResult(pid, when, "2889-4", "24 hour urine protein", round(value, 1), "mg/24h")]


def _patient(rng: np.random.Generator, cfg: SyntheticConfig, index: int, mu: float, sigma: float) -> PatientRecord:
    pid = f"P{index:05d}"
    case = bool(rng.random() < cfg.prevalence)
    carrier = case and bool(rng.random() < cfg.note_evidence_rate)

    n_notes = max(1, int(round(rng.lognormal(mu, sigma)))) if cfg.note_count_sd > 0 else max(1, round(cfg.note_count_mean))
    offsets = np.sort(rng.integers(0, _SPAN_DAYS, size=n_notes))
    bodies: list[list[str]] = [
        list(rng.choice(FILLER_SENTENCES, size=int(rng.integers(1, cfg.filler_sentences_per_note + 1))))
        for _ in range(n_notes)
    ]

    def plant(sentence: str) -> None:
        body = bodies[int(rng.integers(n_notes))]
        body.insert(int(rng.integers(len(body) + 1)), sentence)

    for concept in sorted(cfg.signal_strengths):
        p_case, p_control = cfg.signal_strengths[concept]
        if rng.random() < (p_case if carrier else p_control):
            templates = CONCEPT_SENTENCES[concept]
            for _ in range(1 + int(rng.poisson(cfg.mentions_per_concept))):
                plant(str(templates[int(rng.integers(len(templates)))]))
    if rng.random() < cfg.negated_distractor_rate:
        for _ in range(int(rng.integers(1, 3))):
            plant(str(NEGATED_DISTRACTORS[int(rng.integers(len(NEGATED_DISTRACTORS)))]))

    notes = []
    for k, (off, body) in enumerate(zip(offsets, bodies)):
        when = _EPOCH + timedelta(days=int(off))
        dept = DEPARTMENTS[int(rng.integers(len(DEPARTMENTS)))]
        ntype = NOTE_TYPES[int(rng.integers(len(NOTE_TYPES)))]
        text = " ".join(body)
        notes.append(ClinicalNote(f"{pid}-N{k:04d}", pid, dept, ntype, when, text))
        if rng.random() < cfg.duplicate_note_rate:
            notes.append(ClinicalNote(f"{pid}-N{k:04d}-copy", pid, dept, ntype,
                                      when + timedelta(days=int(rng.integers(0, 3))), text))

    first = _EPOCH + timedelta(days=int(offsets[0]))
    labs = [LabResult(pid, first, "2160-0", "Creatinine, serum", round(float(rng.uniform(0.5, 1.6)), 2), "mg/dL")]
    if case:
        if rng.random() >= cfg.missing_lab_rate:
            labs += _proteinuria_labs(rng, pid, bool(rng.random() < cfg.case_lab_positive_rate), first)
    else:
        if rng.random() < cfg.control_lab_positive_rate:
            labs += _proteinuria_labs(rng, pid, True, first)
        elif rng.random() < 0.6:
            labs += _proteinuria_labs(rng, pid, False, first)

    codes = [DiagnosisCode(pid, first, "ICD10", "M32.9") if rng.random() < 0.7
             else DiagnosisCode(pid, first, "ICD9", "710.0")]
    if rng.random() < (cfg.case_code_rate if case else cfg.control_code_rate):
        codes.append(DiagnosisCode(pid, first, "ICD10", "M32.14") if rng.random() < 0.6
                     else DiagnosisCode(pid, first, "ICD9", "583.81"))

    return PatientRecord(pid, tuple(notes), tuple(labs), tuple(codes), distinct_note_dates(notes), case)


def generate_synthetic_cohort(config: SyntheticConfig = SyntheticConfig()) -> Cohort:
    """Generate ``config.n_patients`` labeled patients; deterministic given ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    mu, sigma = lognormal_params(config.note_count_mean, max(config.note_count_sd, 1e-12))
    patients = tuple(_patient(rng, config, i + 1, mu, sigma) for i in range(config.n_patients))
    return Cohort(patients, f"synthetic seed={config.seed} n={config.n_patients}")
