"""Student records, cohort labeling, feature extraction, CSV I/O and a synthetic cohort.

The feature schema is fixed: every matrix, model file and report in the
package uses the column order of ``FEATURES``.
"""

from __future__ import annotations

import csv
import enum
import math
import os
import tempfile
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from retention_lab.errors import ConfigError, RowError, SchemaError, ValidationError

FEATURES: tuple[str, ...] = (
    "Genero",
    "EdadUltimaActividad",
    "TiempoFacultad",
    "PromedioNotas",
    "NumeroTotalCursadas",
    "NumeroRegulares",
    "NumeroRecursadas",
    "NumeroLibres",
    "NumerodeExamenes",
    "NumeroPromociones",
    "NumeroAprobados",
    "NumerodeReprobados",
    "NumerodeAusentes",
    "MaxRegAcum",
)
LABEL = "Abandono"
DAYS_PER_YEAR = 365.25
STUDY_WINDOW = (2005, 2019)

# StudentRecord attribute -> schema column, for the verbatim count features.
_COUNT_COLUMNS = {
    "courses_taken_total": "NumeroTotalCursadas",
    "courses_regularised": "NumeroRegulares",
    "courses_retaken": "NumeroRecursadas",
    "courses_libres": "NumeroLibres",
    "exam_count": "NumerodeExamenes",
    "courses_promoted": "NumeroPromociones",
    "courses_passed": "NumeroAprobados",
    "exams_failed": "NumerodeReprobados",
    "exams_absent": "NumerodeAusentes",
    "max_reg_accum": "MaxRegAcum",
}


class CohortLabel(enum.Enum):
    GRADUATED = "Graduated"
    PERMANENT = "Permanent"
    DROPOUT = "Dropout"


@dataclass(frozen=True)
class StudentRecord:
    """One academic trajectory as exported from the student-management system.

    ``age_last_activity`` is used when ``birth_date`` is absent.
    """

    id: str
    gender: int
    entry_date: date
    last_activity_date: date | None
    completed: bool
    enrolled_2020: bool
    has_equivalencies: bool = False
    grade_sum: float = 0.0
    exam_count: int = 0
    courses_taken_total: int = 0
    courses_regularised: int = 0
    courses_retaken: int = 0
    courses_libres: int = 0
    courses_promoted: int = 0
    courses_passed: int = 0
    exams_failed: int = 0
    exams_absent: int = 0
    max_reg_accum: int = 0
    birth_date: date | None = None
    age_last_activity: float | None = None

    def validate(self) -> None:
        if self.gender not in (0, 1):
            raise ValidationError(f"gender must be 0 or 1, got {self.gender!r}", "gender")
        if self.last_activity_date is None:
            raise ValidationError(
                f"record {self.id}: no last activity date", "last_activity_date"
            )
        if self.last_activity_date < self.entry_date:
            raise ValidationError(
                f"record {self.id}: last activity precedes entry date", "last_activity_date"
            )
        for attr in _COUNT_COLUMNS:
            value = getattr(self, attr)
            if value < 0:
                raise ValidationError(f"record {self.id}: {attr} is negative", attr)
        if not math.isfinite(self.grade_sum):
            raise ValidationError(f"record {self.id}: grade_sum is not finite", "grade_sum")
        if self.birth_date is None and self.age_last_activity is None:
            raise ValidationError(
                f"record {self.id}: need birth_date or age_last_activity", "birth_date"
            )


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    label: int

    def __post_init__(self):
        if len(self.values) != len(FEATURES):
            raise ValidationError(
                f"expected {len(FEATURES)} feature values, got {len(self.values)}", "values"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise ValidationError("feature values must be finite", "values")
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label!r}", "label")

    def __getitem__(self, name: str) -> float:
        return self.values[FEATURES.index(name)]


def label_student(
    r: StudentRecord, study_window: tuple[int, int] = STUDY_WINDOW
) -> CohortLabel:
    """Graduated / Permanent / Dropout.

    The completion year of a graduate is the year of its last activity. A
    record that completed outside ``study_window`` is not part of the study
    population and is rejected.
    """
    first, last = study_window
    if r.completed:
        if r.last_activity_date is None:
            raise ValidationError(
                f"record {r.id}: completed but no activity recorded", "last_activity_date"
            )
        year = r.last_activity_date.year
        if not first <= year <= last:
            raise ValidationError(
                f"record {r.id}: completion year {year} outside {first}-{last}",
                "last_activity_date",
            )
        return CohortLabel.GRADUATED
    if r.enrolled_2020:
        return CohortLabel.PERMANENT
    return CohortLabel.DROPOUT


def apply_exclusions(cohort: Iterable[StudentRecord]) -> list[StudentRecord]:
    """Drop students whose subjects were approved through equivalencies."""
    return [r for r in cohort if not r.has_equivalencies]


def _whole_years(born: date, on: date) -> int:
    years = on.year - born.year
    if (on.month, on.day) < (born.month, born.day):
        years -= 1
    return years


def extract_features(
    r: StudentRecord, study_window: tuple[int, int] = STUDY_WINDOW
) -> FeatureVector:
    r.validate()
    tenure = (r.last_activity_date - r.entry_date).days / DAYS_PER_YEAR
    if tenure < 0:
        raise ValidationError(f"record {r.id}: negative tenure", "last_activity_date")
    if r.birth_date is not None:
        age = float(_whole_years(r.birth_date, r.last_activity_date))
    else:
        age = float(r.age_last_activity)
    mean_grade = r.grade_sum / r.exam_count if r.exam_count > 0 else 0.0
    by_column = {col: float(getattr(r, attr)) for attr, col in _COUNT_COLUMNS.items()}
    by_column.update(
        Genero=float(r.gender),
        EdadUltimaActividad=age,
        TiempoFacultad=tenure,
        PromedioNotas=mean_grade,
    )
    label = int(label_student(r, study_window) is CohortLabel.DROPOUT)
    return FeatureVector(tuple(by_column[name] for name in FEATURES), label)


def to_arrays(vectors: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    """Stack vectors into an ``(n, 14)`` float matrix and an int label array."""
    if not vectors:
        return np.empty((0, len(FEATURES))), np.empty(0, dtype=np.int64)
    X = np.array([v.values for v in vectors], dtype=np.float64)
    y = np.array([v.label for v in vectors], dtype=np.int64)
    return X, y


def from_arrays(X: np.ndarray, y: np.ndarray) -> list[FeatureVector]:
    return [FeatureVector(tuple(float(v) for v in row), int(lab)) for row, lab in zip(X, y)]


# --------------------------------------------------------------------------- CSV


@dataclass
class ParseReport:
    rows_read: int = 0
    rows_rejected: int = 0
    errors: list[str] = field(default_factory=list)


def load_cohort_csv(
    path: str | os.PathLike, strict: bool = True
) -> tuple[list[FeatureVector], ParseReport]:
    """Read a cohort CSV (schema columns plus ``Abandono``), preserving row order.

    In strict mode the first bad row raises :class:`RowError`; otherwise bad
    rows are skipped and listed in the report.
    """
    report = ParseReport()
    vectors: list[FeatureVector] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        for name in (*FEATURES, LABEL):
            if name not in header:
                raise SchemaError(f"{path}: missing column {name}", column=name)
        cols = [header.index(name) for name in FEATURES]
        label_col = header.index(LABEL)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            report.rows_read += 1
            try:
                vectors.append(_parse_row(row, cols, label_col, line))
            except RowError as exc:
                if strict:
                    raise
                report.rows_rejected += 1
                report.errors.append(str(exc))
    return vectors, report


def _parse_row(row: list[str], cols: list[int], label_col: int, line: int) -> FeatureVector:
    if len(row) <= max(*cols, label_col):
        raise RowError("too few cells", line)
    values = []
    for name, c in zip(FEATURES, cols):
        try:
            v = float(row[c])
        except ValueError:
            raise RowError(f"non-numeric value {row[c]!r} in column {name}", line) from None
        if not math.isfinite(v):
            raise RowError(f"non-finite value in column {name}", line)
        values.append(v)
    cell = row[label_col].strip()
    if cell not in ("0", "1", "0.0", "1.0"):
        raise RowError(f"{LABEL} must be 0 or 1, got {cell!r}", line)
    return FeatureVector(tuple(values), int(float(cell)))


def format_number(v: float) -> str:
    """Shortest round-trip text for ``v``; integral values print without a decimal point."""
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cohort_to_csv(vectors: Sequence[FeatureVector]) -> str:
    lines = [",".join((*FEATURES, LABEL))]
    for v in vectors:
        lines.append(",".join([*(format_number(x) for x in v.values), str(v.label)]))
    return "\n".join(lines) + "\n"


def write_cohort_csv(path: str | os.PathLike, vectors: Sequence[FeatureVector]) -> None:
    atomic_write_text(path, cohort_to_csv(vectors))


# ------------------------------------------------------------------ synthetic data


@dataclass(frozen=True)
class SynthConfig:
    n_students: int = 2000
    seed: int = 7
    dropout_base_rate: float = 0.5
    noise_scale: float = 1.0

    def validate(self) -> None:
        if not isinstance(self.n_students, (int, np.integer)) or self.n_students <= 0:
            raise ConfigError(f"n_students must be a positive integer, got {self.n_students!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if not 0.0 < self.dropout_base_rate < 1.0:
            raise ConfigError(
                f"dropout_base_rate must lie in (0, 1), got {self.dropout_base_rate!r}"
            )
        if not (self.noise_scale >= 0 and math.isfinite(self.noise_scale)):
            raise ConfigError(f"noise_scale must be >= 0, got {self.noise_scale!r}")


def dropout_log_odds(X: np.ndarray) -> np.ndarray:
    """Ground-truth dropout score of the synthetic generator (up to an intercept).

    Piecewise shapes per feature:

    * tenure: low up to 3 years, rising steadily past 6 years
    * age at last activity: increasing between 20 and 26, high after
    * regularised courses: high at 0-5, falling through 6-13, low from 14
    * failed exams: low at 0-5, rising after
    * mean grade and promoted courses: protective
    """
    col = {name: X[:, j] for j, name in enumerate(FEATURES)}
    tenure = col["TiempoFacultad"]
    f_tenure = np.select(
        [tenure <= 3.0, tenure <= 6.0], [-1.8, -0.5], 0.8 + 0.45 * (tenure - 6.0)
    )
    age = col["EdadUltimaActividad"]
    f_age = np.where(age < 20, 0.13, 0.23 * (np.clip(age, 20, 26) - 23.0)) + np.where(
        age >= 27, 0.5, 0.0
    )
    reg = col["NumeroRegulares"]
    f_reg = np.select([reg <= 5, reg <= 13], [2.1, 2.1 - 0.39 * (reg - 5)], -2.1)
    failed = col["NumerodeReprobados"]
    f_failed = np.where(failed <= 5, -1.2 + 0.065 * failed, -0.875 + 0.4 * (failed - 5))
    f_grade = -0.6 * (col["PromedioNotas"] - 6.0)
    f_promo = -0.15 * (col["NumeroPromociones"] - 3.0)
    f_gender = 0.13 * col["Genero"]
    return f_tenure + f_age + f_reg + f_failed + f_grade + f_promo + f_gender


def synth_cohort(cfg: SynthConfig) -> list[FeatureVector]:
    """Seeded synthetic cohort with the dependence structure of ``dropout_log_odds``.

    Labels are assigned by ranking ``log_odds + noise_scale * Logistic(0, 1)``
    and marking the top ``round(n * dropout_base_rate)`` students as dropouts,
    so the realized rate matches the base rate to within ``1 / n``.
    """
    cfg.validate()
    X = _synth_features(cfg.n_students, np.random.default_rng(cfg.seed))
    rng = np.random.default_rng([cfg.seed, 1])
    u = rng.random(cfg.n_students)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    latent = dropout_log_odds(X) + cfg.noise_scale * np.log(u / (1.0 - u))
    k = int(math.floor(cfg.n_students * cfg.dropout_base_rate + 0.5))
    order = np.argsort(-latent, kind="stable")
    y = np.zeros(cfg.n_students, dtype=np.int64)
    y[order[:k]] = 1
    return from_arrays(X, y)


def _synth_features(n: int, rng: np.random.Generator) -> np.ndarray:
    engagement = rng.standard_normal(n)
    gender = (rng.random(n) < 0.3).astype(np.float64)
    tenure_days = rng.integers(60, int(11 * DAYS_PER_YEAR), size=n)
    tenure = tenure_days / DAYS_PER_YEAR
    entry_age = 17.0 + rng.gamma(2.0, 0.9, size=n)
    age = np.floor(entry_age + tenure)

    years = np.minimum(tenure, 6.0)
    regular = rng.poisson(np.exp(np.log(7.0) + 0.55 * engagement + 0.12 * (years - 3.0)))
    promoted = rng.poisson(np.exp(np.log(3.0) + 0.5 * engagement))
    libres = rng.poisson(np.exp(np.log(1.5) - 0.4 * engagement + 0.08 * years))
    retaken = rng.poisson(np.exp(np.log(1.2) - 0.3 * engagement))
    total = regular + promoted + libres + retaken + rng.poisson(1.0, size=n)
    exams = rng.poisson(0.9 * regular + 1.0)
    pass_rate = 1.0 / (1.0 + np.exp(-(0.4 + 0.6 * engagement)))
    passed = rng.binomial(exams, pass_rate) + promoted
    failed = rng.poisson(np.exp(np.log(4.0) - 0.35 * engagement))
    absent = rng.poisson(np.exp(np.log(1.5) - 0.3 * engagement))
    grade = np.round(np.clip(6.0 + 0.7 * engagement + rng.normal(0.0, 1.0, n), 2.0, 10.0), 2)
    grade = np.where(exams == 0, 0.0, grade)
    max_reg = np.minimum(regular, rng.poisson(2.0 + 0.15 * regular))

    columns = {
        "Genero": gender,
        "EdadUltimaActividad": age,
        "TiempoFacultad": tenure,
        "PromedioNotas": grade,
        "NumeroTotalCursadas": total,
        "NumeroRegulares": regular,
        "NumeroRecursadas": retaken,
        "NumeroLibres": libres,
        "NumerodeExamenes": exams,
        "NumeroPromociones": promoted,
        "NumeroAprobados": passed,
        "NumerodeReprobados": failed,
        "NumerodeAusentes": absent,
        "MaxRegAcum": max_reg,
    }
    return np.column_stack([np.asarray(columns[name], dtype=np.float64) for name in FEATURES])
