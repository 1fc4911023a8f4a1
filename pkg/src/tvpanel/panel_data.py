"""Panel count observations: subjects, datasets, CSV ingestion and validation.

Counts are stored cumulatively, exactly as observed at each visit.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .exceptions import PanelParseError, ValidationError

CSV_COLUMNS = ("subject_id", "visit_time", "cumulative_count", "covariate", "censor_time")


def _frozen_array(values, dtype):
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Subject:
    """One individual's visit schedule and cumulative event counts.

    ``censor_time`` defaults to the last visit time when omitted.
    """

    id: object
    visit_times: np.ndarray
    cumulative_counts: np.ndarray
    covariate: float
    censor_time: float | None = None

    def __post_init__(self):
        times = _frozen_array(self.visit_times, float)
        counts = _frozen_array(self.cumulative_counts, np.int64)
        object.__setattr__(self, "visit_times", times)
        object.__setattr__(self, "cumulative_counts", counts)
        object.__setattr__(self, "covariate", float(self.covariate))
        if self.censor_time is None:
            censor = float(times[-1]) if times.size else 0.0
        else:
            censor = float(self.censor_time)
        object.__setattr__(self, "censor_time", censor)

    @property
    def n_visits(self) -> int:
        return int(self.visit_times.size)

    def __eq__(self, other):
        if not isinstance(other, Subject):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.visit_times, other.visit_times)
            and np.array_equal(self.cumulative_counts, other.cumulative_counts)
            and self.covariate == other.covariate
            and self.censor_time == other.censor_time
        )

    __hash__ = None


@dataclass(frozen=True)
class Violation:
    subject_id: object
    rule: str
    detail: str = ""

    def __str__(self):
        who = "dataset" if self.subject_id is None else f"subject {self.subject_id!r}"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{who}: {self.rule}{extra}"


@dataclass(frozen=True)
class VisitTable:
    """All visits of a dataset flattened into parallel arrays, sorted by time."""

    subject: np.ndarray
    time: np.ndarray
    count: np.ndarray
    covariate: np.ndarray
    censor: np.ndarray


@dataclass(frozen=True, eq=False)
class PanelDataset:
    subjects: tuple
    tau: float | None = None

    def __post_init__(self):
        subjects = tuple(self.subjects)
        object.__setattr__(self, "subjects", subjects)
        if self.tau is None:
            horizon = 0.0
            for s in subjects:
                if s.n_visits:
                    horizon = max(horizon, float(s.visit_times[-1]))
                horizon = max(horizon, s.censor_time)
            object.__setattr__(self, "tau", horizon)
        else:
            object.__setattr__(self, "tau", float(self.tau))

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __eq__(self, other):
        if not isinstance(other, PanelDataset):
            return NotImplemented
        return self.tau == other.tau and self.subjects == other.subjects

    __hash__ = None

    @property
    def n(self) -> int:
        return len(self.subjects)

    @cached_property
    def covariates(self) -> np.ndarray:
        return _frozen_array([s.covariate for s in self.subjects], float)

    @cached_property
    def visits(self) -> VisitTable:
        sizes = [s.n_visits for s in self.subjects]
        subj = np.repeat(np.arange(self.n), sizes)
        if self.n:
            time = np.concatenate([s.visit_times for s in self.subjects])
            count = np.concatenate([s.cumulative_counts for s in self.subjects])
        else:
            time = np.empty(0)
            count = np.empty(0, dtype=np.int64)
        cov = self.covariates[subj]
        cens = np.array([s.censor_time for s in self.subjects])[subj]
        order = np.argsort(time, kind="stable")
        arrays = [a[order] for a in (subj, time, count.astype(float), cov, cens)]
        for a in arrays:
            a.setflags(write=False)
        return VisitTable(*arrays)

    @cached_property
    def visit_grid(self) -> np.ndarray:
        """Distinct visit times pooled over subjects (ascending)."""
        return np.unique(self.visits.time)


def at_risk(subject: Subject, t: float) -> int:
    """Indicator that ``subject`` is still under observation at ``t`` (closed)."""
    return int(subject.censor_time >= t)


def count_at(subject: Subject, t: float) -> int:
    """Cumulative count at the last visit not after ``t``; zero before the first visit."""
    k = int(np.searchsorted(subject.visit_times, t, side="right"))
    if k == 0:
        return 0
    return int(subject.cumulative_counts[k - 1])


def validate(dataset: PanelDataset) -> list[Violation]:
    """Return every structural violation in ``dataset``; empty means valid."""
    out = []
    tau = dataset.tau
    for s in dataset.subjects:
        times, counts = s.visit_times, s.cumulative_counts
        if times.size != counts.size:
            out.append(Violation(s.id, "length mismatch",
                                 f"{times.size} visit times, {counts.size} counts"))
            continue
        if times.size == 0:
            out.append(Violation(s.id, "at least one visit"))
            continue
        if not np.all(np.isfinite(times)):
            out.append(Violation(s.id, "finite visit times"))
            continue
        if times[0] <= 0:
            out.append(Violation(s.id, "positive visit times", f"first visit {times[0]!r}"))
        if np.any(np.diff(times) <= 0):
            out.append(Violation(s.id, "strictly increasing visit times"))
        if counts[0] < 0:
            out.append(Violation(s.id, "nonnegative counts"))
        if np.any(np.diff(counts) < 0):
            out.append(Violation(s.id, "nondecreasing counts"))
        if times[-1] > tau:
            out.append(Violation(s.id, "visits within horizon",
                                 f"visit {times[-1]!r} > tau {tau!r}"))
        if not (s.censor_time >= 0) or not math.isfinite(s.censor_time):
            out.append(Violation(s.id, "nonnegative censor time"))
        if not math.isfinite(s.covariate):
            out.append(Violation(s.id, "finite covariate"))
    if not (tau > 0):
        out.append(Violation(None, "positive horizon", f"tau={tau!r}"))
    if len(set(dataset.covariates.tolist())) < 2:
        out.append(Violation(None, "distinct covariates",
                             "need at least 2 subjects with different covariate values"))
    return out


def check_dataset(dataset: PanelDataset) -> PanelDataset:
    """Raise :class:`ValidationError` unless ``dataset`` is valid."""
    violations = validate(dataset)
    if violations:
        raise ValidationError(violations)
    return dataset


def _parse_float(text, name, line):
    try:
        value = float(text)
    except ValueError:
        raise PanelParseError(f"non-numeric {name} {text!r}", line) from None
    if not math.isfinite(value):
        raise PanelParseError(f"non-finite {name} {text!r}", line)
    return value


def _parse_count(text, line):
    try:
        return int(text)
    except ValueError:
        pass
    value = _parse_float(text, "cumulative_count", line)
    if value != int(value):
        raise PanelParseError(f"non-integer cumulative_count {text!r}", line)
    return int(value)


def ingest_csv(text, tau: float | None = None, check: bool = True) -> PanelDataset:
    """Parse panel CSV text (or a text stream) into a :class:`PanelDataset`.

    Rows are grouped by ``subject_id`` in order of first appearance and each
    subject's visits are sorted by time. A blank ``censor_time`` defaults to
    the subject's last visit time.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines())
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise PanelParseError("empty input, header required")
    header_line, header_text = lines[0]
    header = [h.strip() for h in next(csv.reader([header_text]))]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise PanelParseError(f"header missing columns {missing}", header_line)
    col = {name: header.index(name) for name in CSV_COLUMNS}

    rows: dict = {}
    for lineno, raw in lines[1:]:
        fields = [f.strip() for f in next(csv.reader([raw]))]
        if len(fields) != len(header):
            raise PanelParseError(f"expected {len(header)} fields, got {len(fields)}", lineno)
        sid = fields[col["subject_id"]]
        if not sid:
            raise PanelParseError("empty subject_id", lineno)
        t = _parse_float(fields[col["visit_time"]], "visit_time", lineno)
        c = _parse_count(fields[col["cumulative_count"]], lineno)
        z = _parse_float(fields[col["covariate"]], "covariate", lineno)
        cens_text = fields[col["censor_time"]]
        cens = None if cens_text == "" else _parse_float(cens_text, "censor_time", lineno)
        entry = rows.setdefault(sid, {"visits": [], "z": z, "censor": cens, "line": lineno})
        if entry["z"] != z:
            raise PanelParseError(f"covariate not constant within subject {sid!r}", lineno)
        if entry["censor"] != cens:
            raise PanelParseError(f"censor_time not constant within subject {sid!r}", lineno)
        entry["visits"].append((t, c))

    subjects = []
    for sid, entry in rows.items():
        visits = sorted(entry["visits"], key=lambda v: v[0])
        subjects.append(Subject(
            id=sid,
            visit_times=[v[0] for v in visits],
            cumulative_counts=[v[1] for v in visits],
            covariate=entry["z"],
            censor_time=entry["censor"],
        ))
    dataset = PanelDataset(tuple(subjects), tau=tau)
    if check:
        check_dataset(dataset)
    return dataset


def read_csv(path, tau: float | None = None, check: bool = True) -> PanelDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return ingest_csv(fh.read(), tau=tau, check=check)


def format_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def emit_csv(dataset: PanelDataset) -> str:
    """Serialize ``dataset`` to the panel CSV schema (one row per visit)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in dataset.subjects:
        for t, c in zip(s.visit_times, s.cumulative_counts):
            writer.writerow([s.id, format_number(t), int(c),
                             format_number(s.covariate), format_number(s.censor_time)])
    return buf.getvalue()


def write_csv(dataset: PanelDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(emit_csv(dataset))


def from_arrays(ids: Sequence, times: Iterable, counts: Iterable, covariates: Iterable,
                censor_times: Iterable | None = None, tau: float | None = None) -> PanelDataset:
    """Build a dataset from long-format arrays (one entry per visit)."""
    ids = np.asarray(ids)
    times = np.asarray(times, dtype=float)
    counts = np.asarray(counts)
    covariates = np.asarray(covariates, dtype=float)
    censor = None if censor_times is None else np.asarray(censor_times, dtype=float)
    order: dict = {}
    for k, sid in enumerate(ids.tolist()):
        order.setdefault(sid, []).append(k)
    subjects = []
    for sid, idx in order.items():
        idx = np.asarray(idx)
        idx = idx[np.argsort(times[idx], kind="stable")]
        subjects.append(Subject(sid, times[idx], counts[idx], covariates[idx[0]],
                                None if censor is None else censor[idx[0]]))
    return PanelDataset(tuple(subjects), tau=tau)
