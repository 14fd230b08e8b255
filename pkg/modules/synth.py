"""Synthetic reaching cohorts with a known functional-difficulty field τ*(x)."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from modules.core_model import Cue, Dataset, ReachRecord
from modules.errors import ValidationError
from modules.workspace import WorkspaceSpec, generate_grid

logger = logging.getLogger(__name__)

_CUES = (Cue.MOVE, Cue.OK, Cue.REACH, Cue.NOW)
MIN_TIME_S = 0.05


def _bounds(value):
    if value is None:
        return (-math.inf, math.inf)
    lo, hi = value
    lo = -math.inf if lo is None else float(lo)
    hi = math.inf if hi is None else float(hi)
    if lo > hi:
        raise ValidationError(f"box bound {value} has lo > hi")
    return (lo, hi)


def _bound_to_config(bound):
    return [None if math.isinf(b) else b for b in bound]


@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box over (x, y, z); open sides are ±inf."""

    x: tuple = (-math.inf, math.inf)
    y: tuple = (-math.inf, math.inf)
    z: tuple = (-math.inf, math.inf)

    def contains(self, target):
        return (self.x[0] <= target.x <= self.x[1]
                and self.y[0] <= target.y <= self.y[1]
                and self.z[0] <= target.z <= self.z[1])


@dataclass(frozen=True)
class Region:
    box: Box
    tau: float


@dataclass(frozen=True)
class DifficultyField:
    regions: tuple = ()
    default_tau: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        taus = [self.default_tau] + [r.tau for r in self.regions]
        if any(not (math.isfinite(t) and t >= 0) for t in taus):
            raise ValidationError(f"difficulty values must be finite and >= 0, got {taus}")

    @classmethod
    def from_config(cls, section):
        section = section or {}
        regions = tuple(
            Region(Box(_bounds(r.get("x")), _bounds(r.get("y")), _bounds(r.get("z"))), float(r["tau"]))
            for r in section.get("regions", [])
        )
        return cls(regions, float(section.get("default_tau", 0.0)))

    def to_config(self):
        return {
            "default_tau": self.default_tau,
            "regions": [
                {"tau": r.tau, "x": _bound_to_config(r.box.x), "y": _bound_to_config(r.box.y),
                 "z": _bound_to_config(r.box.z)}
                for r in self.regions
            ],
        }


def default_field():
    """Two-region scenario: 2.0 s at z >= 0.25 m, 0.5 s elsewhere."""
    return DifficultyField((Region(Box(z=(0.25, math.inf)), 2.0),), default_tau=0.5)


def true_tau(field, target):
    """tau of the first region containing target, else the default."""
    for region in field.regions:
        if region.box.contains(target):
            return region.tau
    return field.default_tau


@dataclass(frozen=True)
class NominalTimeModel:
    t0: float = 0.8
    a: float = 2.0
    b: float = 1.0
    sigma: float = 0.3

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValidationError(f"t0 must be > 0, got {self.t0}")
        if not self.sigma >= 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")

    def expected(self, target):
        dist = math.sqrt(target.x * target.x + target.y * target.y + target.z * target.z)
        return self.t0 + self.a * dist + self.b * target.z

    def min_expected(self, workspace):
        """Smallest expected time anywhere in the workspace."""
        # t0 + a·hypot(r, z) + b·z is minimized at the r and z bounds, or where d/dz = 0 when a > |b|
        zs = [workspace.z_min, workspace.z_max]
        if self.a > abs(self.b):
            z = -self.b * workspace.r_min / math.sqrt(self.a ** 2 - self.b ** 2)
            zs.append(min(max(z, workspace.z_min), workspace.z_max))
        return min(
            self.t0 + self.a * math.hypot(r, z) + self.b * z
            for r in (workspace.r_min, workspace.r_max)
            for z in zs
        )

    @classmethod
    def from_config(cls, section):
        section = section or {}
        defaults = cls()
        return cls(*(float(section.get(k, getattr(defaults, k))) for k in ("t0", "a", "b", "sigma")))


def simulate_reach(nominal, field, target, rng, p_distract=0.0, delay=(1.0, 3.0)):
    """One reach time: nominal + noise + τ*(target) + occasional missed-cue delay, floored at 0.05 s."""
    time = nominal.expected(target) + rng.normal(0.0, nominal.sigma)
    if field is not None:
        time += true_tau(field, target)
    if rng.random() < p_distract:
        time += rng.uniform(delay[0], delay[1])
    return max(float(time), MIN_TIME_S)


@dataclass(frozen=True)
class CohortSpec:
    n_neurotypical: int = 10
    n_post_stroke: int = 15
    sessions_per_stroke: int = 3
    reaches_per_session: int = 100
    p_distract: float = 0.05
    distract_delay: tuple = (1.0, 3.0)
    nominal: NominalTimeModel = field(default_factory=NominalTimeModel)
    difficulty_field: DifficultyField = field(default_factory=default_field)
    participant_fields: dict = field(default_factory=dict)
    sessions_override: dict = field(default_factory=dict)
    workspace: WorkspaceSpec = field(default_factory=WorkspaceSpec)
    grid: tuple = (5, 5, 4)
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_neurotypical, self.n_post_stroke, self.sessions_per_stroke, self.reaches_per_session)
        if any(c < 1 for c in counts):
            raise ValidationError(f"cohort counts must be >= 1, got {counts}")
        if not 0 <= self.p_distract < 1:
            raise ValidationError(f"p_distract must lie in [0, 1), got {self.p_distract}")
        lo, hi = self.distract_delay
        if lo > hi:
            raise ValidationError(f"distract_delay needs lo <= hi, got {self.distract_delay}")
        if any(int(n) < 1 for n in self.sessions_override.values()):
            raise ValidationError("sessions_override values must be >= 1")
        lowest = self.nominal.min_expected(self.workspace)
        if not lowest > 0:
            raise ValidationError(f"nominal time model gives {lowest:.3f} s inside the workspace; expected times must be > 0")

    @classmethod
    def from_config(cls, section, workspace=None):
        section = section or {}
        defaults = cls()
        distraction = section.get("distraction") or {}
        field_section = section.get("field")
        return cls(
            n_neurotypical=int(section.get("n_neurotypical", defaults.n_neurotypical)),
            n_post_stroke=int(section.get("n_post_stroke", defaults.n_post_stroke)),
            sessions_per_stroke=int(section.get("sessions_per_stroke", defaults.sessions_per_stroke)),
            reaches_per_session=int(section.get("reaches_per_session", defaults.reaches_per_session)),
            p_distract=float(distraction.get("p", defaults.p_distract)),
            distract_delay=tuple(float(v) for v in distraction.get("delay", defaults.distract_delay)),
            nominal=NominalTimeModel.from_config(section.get("nominal")),
            difficulty_field=default_field() if field_section is None else DifficultyField.from_config(field_section),
            participant_fields={
                str(pid): DifficultyField.from_config(f) for pid, f in (section.get("participant_fields") or {}).items()
            },
            sessions_override={str(pid): int(n) for pid, n in (section.get("sessions_override") or {}).items()},
            workspace=workspace or WorkspaceSpec(),
            grid=tuple(int(n) for n in section.get("grid", defaults.grid)),
            seed=int(section.get("seed", defaults.seed)),
        )

    def neurotypical_ids(self):
        return [f"N{i + 1:02d}" for i in range(self.n_neurotypical)]

    def post_stroke_ids(self):
        return [f"S{i + 1:02d}" for i in range(self.n_post_stroke)]

    def field_for(self, participant_id):
        return self.participant_fields.get(participant_id, self.difficulty_field)


def _session_order(n_points, n_reaches, rng):
    # Each pass visits every lattice point once in a fresh random order.
    passes = math.ceil(n_reaches / n_points)
    return np.concatenate([rng.permutation(n_points) for _ in range(passes)])[:n_reaches]


def _participant_records(spec, points, participant_id, condition, n_sessions, field, rng):
    records = []
    for session in range(1, n_sessions + 1):
        order = _session_order(len(points), spec.reaches_per_session, rng)
        for trial, point_index in enumerate(order, start=1):
            target = points[int(point_index)]
            cue = _CUES[int(rng.integers(0, len(_CUES)))]
            time_s = simulate_reach(spec.nominal, field, target, rng, spec.p_distract, spec.distract_delay)
            records.append(ReachRecord(participant_id, session, trial, target, cue, time_s, condition))
    return records


def generate_cohort(spec):
    """Neurotypical participants (condition 0, one session) then post-stroke participants (condition 1)."""
    points = generate_grid(spec.workspace, *spec.grid)
    records = []
    for index, pid in enumerate(spec.neurotypical_ids()):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0, index)))
        records.extend(_participant_records(spec, points, pid, 0, 1, None, rng))
    for index, pid in enumerate(spec.post_stroke_ids()):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(1, index)))
        n_sessions = spec.sessions_override.get(pid, spec.sessions_per_stroke)
        records.extend(_participant_records(spec, points, pid, 1, n_sessions, spec.field_for(pid), rng))

    dataset = Dataset(tuple(records))
    logger.info("Generated cohort: %d control and %d treated reaches",
                int(np.sum(dataset.conditions == 0)), int(np.sum(dataset.conditions == 1)))
    return dataset
