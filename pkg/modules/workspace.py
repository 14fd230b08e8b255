"""Reaching workspace geometry: half-annular lattice, containment and ball queries."""

import math
from dataclasses import dataclass

import numpy as np

from modules.core_model import ReachTarget
from modules.errors import ValidationError

# Slack for lattice points whose radius/angle went through cos/sin rounding.
_EPS = 1e-9


@dataclass(frozen=True)
class WorkspaceSpec:
    r_min: float = 0.10
    r_max: float = 0.30
    arc: float = math.pi
    z_min: float = 0.0
    z_max: float = 0.40

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValidationError(f"need 0 < r_min < r_max, got r_min={self.r_min}, r_max={self.r_max}")
        if not 0 < self.arc <= 2 * math.pi:
            raise ValidationError(f"arc must lie in (0, 2π], got {self.arc}")
        if not self.z_min < self.z_max:
            raise ValidationError(f"need z_min < z_max, got z_min={self.z_min}, z_max={self.z_max}")

    @classmethod
    def from_config(cls, section):
        section = section or {}
        defaults = cls()
        return cls(
            r_min=float(section.get("r_min", defaults.r_min)),
            r_max=float(section.get("r_max", defaults.r_max)),
            arc=math.radians(float(section.get("arc_deg", math.degrees(defaults.arc)))),
            z_min=float(section.get("z_min", defaults.z_min)),
            z_max=float(section.get("z_max", defaults.z_max)),
        )

    def to_config(self):
        return {
            "r_min": self.r_min,
            "r_max": self.r_max,
            "arc_deg": math.degrees(self.arc),
            "z_min": self.z_min,
            "z_max": self.z_max,
        }

    @property
    def theta_start(self):
        # The arc is centred on the forward (+y) direction.
        return math.pi / 2 - self.arc / 2

    @property
    def theta_end(self):
        return math.pi / 2 + self.arc / 2


def generate_grid(spec, n_r, n_theta, n_z):
    """Cylindrical lattice over the workspace, ordered r-major, then θ, then z."""
    counts = (n_r, n_theta, n_z)
    if any(int(c) != c or c < 1 for c in counts):
        raise ValidationError(f"grid counts must be positive integers, got {counts}")

    radii = np.linspace(spec.r_min, spec.r_max, int(n_r))
    # A full circle would repeat its first angle at the end.
    full_circle = spec.arc >= 2 * math.pi - _EPS
    thetas = np.linspace(spec.theta_start, spec.theta_end, int(n_theta), endpoint=not full_circle)
    heights = np.linspace(spec.z_min, spec.z_max, int(n_z))

    points = []
    for r in radii:
        for theta in thetas:
            for z in heights:
                points.append(ReachTarget(float(r * math.cos(theta)), float(r * math.sin(theta)), float(z)))
    return points


def grid_array(points):
    """Lattice targets as an (n, 3) array."""
    return np.array([[p.x, p.y, p.z] for p in points], dtype=float).reshape(-1, 3)


def contains(spec, p):
    """True iff p lies in the half-annulus and height band (boundaries inclusive)."""
    radius = math.hypot(p.x, p.y)
    if not spec.r_min - _EPS <= radius <= spec.r_max + _EPS:
        return False
    if not spec.z_min - _EPS <= p.z <= spec.z_max + _EPS:
        return False
    if spec.arc >= 2 * math.pi - _EPS:
        return True
    offset = math.atan2(p.y, p.x) - math.pi / 2
    offset = (offset + math.pi) % (2 * math.pi) - math.pi
    return abs(offset) <= spec.arc / 2 + _EPS


def ball_indices(targets, center, radius):
    """Row indices of `targets` (n×3) within Euclidean distance ≤ radius of center."""
    if not radius > 0:
        raise ValidationError(f"ball radius must be > 0, got {radius}")
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    delta = targets - np.array([center.x, center.y, center.z])
    dist = np.sqrt(np.sum(delta * delta, axis=1))
    return np.flatnonzero(dist <= radius)


def ball_query(dataset, center, radius):
    """Records whose target lies within the closed ball; dataset order is kept."""
    return [dataset.records[i] for i in ball_indices(dataset.targets, center, radius)]
