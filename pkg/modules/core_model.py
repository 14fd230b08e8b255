"""Reach records, exercise featurization and the reach-log CSV format."""

import io
import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from modules.errors import DimensionError, ParseError, ValidationError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["participant_id", "session", "trial", "x", "y", "z", "cue", "time_s", "condition"]
FEATURE_NAMES = ("x", "y", "z", "x²", "dist_home", "cue=move", "cue=ok", "cue=reach", "cue=now")
N_FEATURES = len(FEATURE_NAMES)


class Cue(str, Enum):
    MOVE = "move"
    OK = "ok"
    REACH = "reach"
    NOW = "now"

    @classmethod
    def parse(cls, text):
        """Lenient lookup for config values and command-line flags; CSV rows use the exact level."""
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown cue level {text!r}; expected one of move, ok, reach, now") from None

    @property
    def index(self):
        return _CUE_ORDER.index(self)


_CUE_ORDER = (Cue.MOVE, Cue.OK, Cue.REACH, Cue.NOW)


@dataclass(frozen=True)
class ReachTarget:
    """Target position in meters: x lateral (midline 0), y forward from home, z height above table."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValidationError(f"target coordinate {name}={value} is not finite")

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class ReachRecord:
    participant_id: str
    session: int
    trial: int
    target: ReachTarget
    cue: Cue
    time_s: float
    condition: int

    def __post_init__(self):
        if not (math.isfinite(self.time_s) and self.time_s > 0):
            raise ValidationError(f"time_s must be finite and > 0, got {self.time_s}")
        if self.condition not in (0, 1):
            raise ValidationError(f"condition must be 0 or 1, got {self.condition}")


def _feature_rows(xyz, cue_index):
    # Shared by featurize and the matrix builder so both give bitwise-identical rows.
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    out = np.zeros((xyz.shape[0], N_FEATURES), dtype=float)
    out[:, 0] = x
    out[:, 1] = y
    out[:, 2] = z
    out[:, 3] = x * x
    out[:, 4] = np.sqrt(x * x + y * y + z * z)
    out[np.arange(xyz.shape[0]), 5 + cue_index] = 1.0
    return out


def featurize(target, cue):
    """Return the 9-element feature vector [x, y, z, x², dist_home, cue one-hot]."""
    xyz = target.as_array()
    if not np.all(np.isfinite(xyz)):
        raise ValidationError(f"non-finite target {target}")
    return _feature_rows(xyz.reshape(1, 3), np.array([Cue.parse(cue).index]))[0]


def featurize_many(xyz, cues):
    """Feature matrix for parallel arrays of positions (n x 3) and cues."""
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(xyz)):
        raise ValidationError("non-finite target coordinates")
    cue_index = np.array([Cue.parse(c).index for c in cues], dtype=int)
    if cue_index.shape[0] != xyz.shape[0]:
        raise ValidationError("one cue is required per target")
    return _feature_rows(xyz, cue_index)


def check_dimension(x, n_features):
    """Raise DimensionError unless X has n_features columns."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n_features:
        raise DimensionError(f"expected {n_features} features, got {x.shape[-1]}")
    return x


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable sequence of reaches with cached numeric views."""

    records: tuple
    features: np.ndarray = field(init=False, repr=False)
    targets: np.ndarray = field(init=False, repr=False)
    times: np.ndarray = field(init=False, repr=False)
    conditions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        targets = np.array([[r.target.x, r.target.y, r.target.z] for r in records], dtype=float).reshape(-1, 3)
        features = _feature_rows(targets, np.array([r.cue.index for r in records], dtype=int))
        times = np.array([r.time_s for r in records], dtype=float)
        conditions = np.array([r.condition for r in records], dtype=int)
        for name, arr in (("targets", targets), ("features", features), ("times", times), ("conditions", conditions)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        return isinstance(other, Dataset) and self.records == other.records

    __hash__ = None

    @property
    def participant_ids(self):
        return tuple(r.participant_id for r in self.records)

    def subset(self, indices):
        return Dataset(tuple(self.records[int(i)] for i in indices))

    def where(self, predicate):
        return Dataset(tuple(r for r in self.records if predicate(r)))

    def treated(self):
        return self.where(lambda r: r.condition == 1)

    def control(self):
        return self.where(lambda r: r.condition == 0)

    def participant(self, participant_id):
        return self.where(lambda r: r.participant_id == participant_id)

    def participants(self, condition=None):
        """Participant ids in first-appearance order, optionally filtered by condition."""
        seen = {}
        for r in self.records:
            if condition is None or r.condition == condition:
                seen.setdefault(r.participant_id, None)
        return list(seen)

    def concat(self, other):
        return Dataset(self.records + other.records)

    def with_times(self, times):
        """Copy with replaced outcome times (same order)."""
        times = np.asarray(times, dtype=float)
        if times.shape[0] != len(self):
            raise ValidationError("one time is required per record")
        return Dataset(tuple(
            ReachRecord(r.participant_id, r.session, r.trial, r.target, r.cue, float(t), r.condition)
            for r, t in zip(self.records, times)
        ))


def _parse_int(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(row, f"malformed integer in column {column!r}: {text!r}") from None
    if not value.is_integer():
        raise ParseError(row, f"malformed integer in column {column!r}: {text!r}")
    return int(value)


def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(row, f"malformed number in column {column!r}: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(row, f"non-finite number in column {column!r}: {text!r}")
    return value


def parse_records(text):
    """Parse reach-log CSV text into a Dataset; rows are numbered from 1 after the header."""
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ParseError(0, "missing header") from None
    except pd.errors.ParserError as e:
        # pandas counts lines from 1 including the header
        match = re.search(r"line (\d+)", str(e))
        row = int(match.group(1)) - 1 if match else 0
        raise ParseError(row, f"expected {len(CSV_COLUMNS)} fields") from None
    if list(df.columns) != CSV_COLUMNS:
        raise ParseError(0, f"header must be exactly {','.join(CSV_COLUMNS)}")

    records = []
    for row_number, row in enumerate(df.itertuples(index=False), start=1):
        values = row._asdict()
        condition = _parse_int(values["condition"], row_number, "condition")
        if condition not in (0, 1):
            raise ParseError(row_number, f"condition must be 0 or 1, got {values['condition']!r}")
        try:
            cue = Cue(values["cue"])
        except ValueError:
            raise ParseError(row_number, f"unknown cue level {values['cue']!r}; expected move, ok, reach or now") from None
        try:
            record = ReachRecord(
                participant_id=values["participant_id"],
                session=_parse_int(values["session"], row_number, "session"),
                trial=_parse_int(values["trial"], row_number, "trial"),
                target=ReachTarget(
                    _parse_float(values["x"], row_number, "x"),
                    _parse_float(values["y"], row_number, "y"),
                    _parse_float(values["z"], row_number, "z"),
                ),
                cue=cue,
                time_s=_parse_float(values["time_s"], row_number, "time_s"),
                condition=condition,
            )
        except ParseError:
            raise
        except ValidationError as e:
            raise ParseError(row_number, str(e)) from None
        records.append(record)

    logger.debug("Parsed %d reach records", len(records))
    return Dataset(tuple(records))


def read_records(path):
    """Read a reach-log CSV file; bytes that are not UTF-8 fail as a ParseError on their row."""
    with open(path, "rb") as file:
        raw = file.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(raw.count(b"\n", 0, e.start), f"invalid UTF-8 at byte {e.start}") from None
    return parse_records(text)


def records_to_frame(dataset):
    """Dataset as a DataFrame with the reach-log columns."""
    return pd.DataFrame(
        {
            "participant_id": [r.participant_id for r in dataset],
            "session": [r.session for r in dataset],
            "trial": [r.trial for r in dataset],
            "x": dataset.targets[:, 0],
            "y": dataset.targets[:, 1],
            "z": dataset.targets[:, 2],
            "cue": [r.cue.value for r in dataset],
            "time_s": dataset.times,
            "condition": dataset.conditions,
        },
        columns=CSV_COLUMNS,
    )


def format_float(value):
    """At least 6 significant digits, more only when needed to round-trip exactly."""
    padded = format(value, "#.6g")
    return padded if float(padded) == value else repr(float(value))


def format_records(dataset):
    """Reach-log CSV text; parsing it back gives an equal Dataset."""
    frame = records_to_frame(dataset)
    for column in ("x", "y", "z", "time_s"):
        frame[column] = [format_float(v) for v in frame[column]]
    return frame.to_csv(index=False, lineterminator="\n")


def write_records(dataset, path):
    """Write a Dataset as reach-log CSV."""
    with open(path, "w", encoding="utf-8", newline="") as file:
        file.write(format_records(dataset))
