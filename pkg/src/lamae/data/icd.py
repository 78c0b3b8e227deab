"""ICD-10 category normalisation and prevalence-based code selection."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

from ..errors import ParseError

# Third-level categories with their prevalence (%) among linked echo studies.
REFERENCE_CODES: tuple[tuple[str, str, float], ...] = (
    ("A41", "Other sepsis", 13.55),
    ("D62", "Acute posthemorrhagic anemia", 12.54),
    ("D63", "Anemia in chronic diseases classified elsewhere", 11.26),
    ("D64", "Other anemias", 13.06),
    ("D69", "Purpura and other hemorrhagic conditions", 14.02),
    ("E03", "Other hypothyroidism", 17.83),
    ("E11", "Type 2 diabetes mellitus", 37.99),
    ("E66", "Overweight and obesity", 14.40),
    ("E78", "Disorders of lipoprotein metabolism and other lipidemias", 56.11),
    ("E87", "Other disorders of fluid, electrolyte and acid-base balance", 35.02),
    ("F32", "Depressive episode", 19.43),
    ("F41", "Other anxiety disorders", 16.61),
    ("G47", "Sleep disorders", 20.83),
    ("I10", "Essential (primary) hypertension", 28.10),
    ("I11", "Hypertensive heart disease", 18.91),
    ("I13", "Hypertensive heart and chronic kidney disease", 22.83),
    ("I21", "Acute myocardial infarction", 16.11),
    ("I25", "Chronic ischemic heart disease", 40.81),
    ("I27", "Other pulmonary heart diseases", 15.53),
    ("I48", "Atrial fibrillation and flutter", 39.21),
    ("I50", "Heart failure", 48.25),
    ("I95", "Hypotension", 15.42),
    ("J18", "Pneumonia, unspecified organism", 10.85),
    ("J44", "Other chronic obstructive pulmonary disease", 15.56),
    ("J96", "Respiratory failure, not elsewhere classified", 24.08),
    ("K21", "Gastro-esophageal reflux disease", 28.88),
    ("N17", "Acute kidney failure", 37.84),
    ("N18", "Chronic kidney disease (CKD)", 35.05),
    ("N39", "Other disorders of urinary system", 12.25),
    ("N40", "Benign prostatic hyperplasia", 9.80),
    (
        "Y83",
        "Surgical operation and other surgical procedures as cause of abnormal reaction "
        "or later complication",
        11.90,
    ),
    ("Y92", "Place of occurrence of the external cause", 34.06),
    ("Z66", "Do not resuscitate", 16.67),
    ("Z68", "Body mass index (BMI)", 21.61),
    ("Z79", "Long term (current) drug therapy", 48.84),
    ("Z85", "Personal history of malignant neoplasm", 22.80),
    ("Z86", "Personal history of certain other diseases", 22.22),
    ("Z87", "Personal history of other diseases and conditions", 36.47),
    ("Z95", "Presence of cardiac and vascular implants and grafts", 25.19),
    ("Z99", "Dependence on enabling machines and devices, not elsewhere classified", 11.78),
)

_DESCRIPTIONS = {code: desc for code, desc, _ in REFERENCE_CODES}

# Letter, two category characters (digit + digit/letter, e.g. "C4A"),
# then an optional subcategory with or without the dot.
_ICD_RE = re.compile(r"^([A-Z][0-9][0-9A-Z])(?:\.?([0-9A-Z]{1,4}))?$")


def normalize_icd(code: str) -> str:
    """Map an ICD-10 code (``"I50.9"``, ``"I509"``, ``"e11"``) to its 3-character category."""
    if not isinstance(code, str):
        raise ParseError(f"ICD code must be text, got {type(code).__name__}")
    m = _ICD_RE.match(code.strip().upper())
    if m is None:
        raise ParseError(f"malformed ICD-10 code: {code!r}")
    return m.group(1)


@dataclass(frozen=True)
class CodeEntry:
    code: str
    description: str
    prevalence: float


@dataclass(frozen=True)
class CodeTable:
    entries: tuple[CodeEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> CodeEntry:
        return self.entries[i]

    @property
    def codes(self) -> list[str]:
        return [e.code for e in self.entries]


def select_top_codes(counts: Mapping[str, int], n_studies: int, k: int) -> CodeTable:
    """Top ``k`` categories by prevalence (count / n_studies, in percent).

    Ties break lexicographically on the code.
    """
    if n_studies <= 0:
        raise ValueError("n_studies must be positive")
    if k > len(counts):
        raise ValueError(f"asked for {k} codes but only {len(counts)} are present")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return CodeTable(
        tuple(CodeEntry(code, _DESCRIPTIONS.get(code, ""), 100.0 * count / n_studies) for code, count in ranked)
    )


def reference_counts(n_studies: int = 10_000) -> dict[str, int]:
    """Integer counts reproducing the bundled prevalences exactly at ``n_studies``."""
    return {code: round(prev * n_studies / 100.0) for code, _, prev in REFERENCE_CODES}


def count_categories(study_codes: Mapping[str, list[str]]) -> dict[str, int]:
    """Per-category number of studies carrying at least one code in that category."""
    counts: dict[str, int] = {}
    for codes in study_codes.values():
        for cat in {normalize_icd(c) for c in codes}:
            counts[cat] = counts.get(cat, 0) + 1
    return counts


def reference_table(k: int = 40) -> CodeTable:
    n = 10_000
    return select_top_codes(reference_counts(n), n, k)
