"""Trajectory logs: CSV ingestion/export, clock sync, synthetic generation.

File format (normative for export, bit-exact across runs):

* UTF-8 CSV with header ``t,x,y,z,qx,qy,qz,qw``; one sample per line, SI
  units, quaternion scalar-last.
* ``#key=value`` comment lines may precede the header; ``agent=smart|adas``
  and ``convention=NED|ENU`` are understood, anything else is carried as
  opaque metadata.
* Estimate exports append per-axis 1-sigma columns ``sx,sy,sz,syaw``; extra
  columns after the canonical eight are ignored on load.

North-east-down inputs are converted to east-north-up at the boundary, so
everything downstream of this module speaks ENU only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .ekf import StateEstimate
from .errors import DataError
from .geometry import (
    WORLD,
    Agent,
    Pose,
    Quaternion,
    body_frame,
    ned_to_enu,
    quat_yaw,
)

HEADER_COLUMNS = ("t", "x", "y", "z", "qx", "qy", "qz", "qw")
ESTIMATE_COLUMNS = HEADER_COLUMNS + ("sx", "sy", "sz", "syaw")
QUAT_NORM_TOLERANCE = 1e-6

TRAJECTORY_KINDS = ("straight", "circle", "figure-eight", "waypoint-spline")


@dataclass(frozen=True)
class TrajectoryLog:
    """A time-ordered series of world->body poses for one agent."""

    agent: Agent
    convention: str
    samples: tuple[Pose, ...]
    metadata: dict[str, str]

    def __post_init__(self) -> None:
        if self.convention not in ("NED", "ENU"):
            raise DataError(f"unknown convention {self.convention!r}")
        object.__setattr__(self, "samples", tuple(self.samples))
        child = body_frame(self.agent)
        prev_t = None
        for i, pose in enumerate(self.samples):
            if pose.parent_frame != WORLD or pose.child_frame != child:
                raise DataError(
                    f"sample {i}: expected {WORLD}->{child}, got {pose.parent_frame}->{pose.child_frame}"
                )
            if prev_t is not None and pose.timestamp <= prev_t:
                raise DataError(f"sample {i}: timestamp {pose.timestamp} not strictly increasing")
            prev_t = pose.timestamp

    def __len__(self) -> int:
        return len(self.samples)

    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.samples])

    def duration(self) -> float:
        if len(self.samples) < 2:
            return 0.0
        return self.samples[-1].timestamp - self.samples[0].timestamp


@dataclass(frozen=True)
class SyncSpec:
    """Constant clock correction: shift the non-reference agent's stamps."""

    offset_seconds: float
    reference: Agent

    def __post_init__(self) -> None:
        if not math.isfinite(self.offset_seconds):
            raise ValueError(f"offset must be finite, got {self.offset_seconds}")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _parse_metadata_line(line: str, lineno: int, path: Path) -> tuple[str, str]:
    body = line[1:].strip()
    if "=" not in body:
        raise DataError(f"{path}:{lineno}: comment is not key=value: {line!r}")
    key, _, value = body.partition("=")
    return key.strip(), value.strip()


def load_trajectory(path) -> TrajectoryLog:
    """Read one trajectory CSV; validate; convert NED inputs to ENU."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    metadata: dict[str, str] = {}
    rows: list[tuple[int, list[float]]] = []
    n_cols = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if n_cols is not None:
                raise DataError(f"{path}:{lineno}: comments are only allowed before the header")
            key, value = _parse_metadata_line(line, lineno, path)
            metadata[key] = value
            continue
        fields = [f.strip() for f in line.split(",")]
        if n_cols is None:
            if tuple(fields[: len(HEADER_COLUMNS)]) != HEADER_COLUMNS:
                raise DataError(
                    f"{path}:{lineno}: header must start with {','.join(HEADER_COLUMNS)}, got {line!r}"
                )
            n_cols = len(fields)
            continue
        if len(fields) != n_cols:
            raise DataError(f"{path}:{lineno}: expected {n_cols} columns, got {len(fields)}")
        try:
            values = [float(f) for f in fields[: len(HEADER_COLUMNS)]]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: unparseable number: {exc}") from exc
        if not all(math.isfinite(v) for v in values):
            raise DataError(f"{path}:{lineno}: non-finite field")
        rows.append((lineno, values))
    if n_cols is None:
        raise DataError(f"{path}: no header line found")

    agent_name = metadata.pop("agent", "adas")
    try:
        agent = Agent(agent_name)
    except ValueError as exc:
        raise DataError(f"{path}: unknown agent {agent_name!r}") from exc
    convention = metadata.pop("convention", "ENU")
    if convention not in ("NED", "ENU"):
        raise DataError(f"{path}: unknown convention {convention!r}")

    child = body_frame(agent)
    samples: list[Pose] = []
    prev_t = None
    prev_row = None
    for row_idx, (lineno, v) in enumerate(rows, start=1):
        t = v[0]
        quat = np.array(v[4:8])
        norm = float(np.linalg.norm(quat))
        if abs(norm - 1.0) > QUAT_NORM_TOLERANCE:
            raise DataError(f"{path}:{lineno}: quaternion norm {norm:.8f} is off unit beyond 1e-6")
        if prev_t is not None and t <= prev_t:
            raise DataError(
                f"{path}: row {row_idx} (line {lineno}): timestamp {t} does not increase "
                f"past row {prev_row}'s {prev_t}"
            )
        try:
            pose = Pose(t, np.array(v[1:4]), Quaternion.from_array(quat), WORLD, child)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        samples.append(pose)
        prev_t, prev_row = t, row_idx

    if convention == "NED":
        samples = [ned_to_enu(p) for p in samples]
    return TrajectoryLog(agent, "ENU", samples, metadata)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def _write_lines(path, lines: list[str]) -> None:
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def export_trajectory(log: TrajectoryLog, path) -> None:
    """Write a log in the canonical CSV format; loading it back is lossless."""
    lines = [f"#agent={log.agent.value}", f"#convention={log.convention}"]
    for key in sorted(log.metadata):
        lines.append(f"#{key}={log.metadata[key]}")
    lines.append(",".join(HEADER_COLUMNS))
    for p in log.samples:
        q = p.rotation
        fields = (p.timestamp, *p.translation, q.x, q.y, q.z, q.w)
        lines.append(",".join(repr(float(v)) for v in fields))
    _write_lines(path, lines)


def export_estimates(states: Sequence[StateEstimate], path, agent: Agent = Agent.ADAS) -> None:
    """Write filter output with per-axis 1-sigma columns for x, y, z and yaw."""
    lines = [f"#agent={agent.value}", "#convention=ENU"]
    lines.append(",".join(ESTIMATE_COLUMNS))
    for s in states:
        q = Quaternion.from_euler(*s.x[3:6])
        sd = np.sqrt(np.maximum(np.diag(s.P)[[0, 1, 2, 5]], 0.0))
        fields = (s.timestamp, *s.x[0:3], q.x, q.y, q.z, q.w, *sd)
        lines.append(",".join(repr(float(v)) for v in fields))
    _write_lines(path, lines)


# ---------------------------------------------------------------------------
# Synchronization
# ---------------------------------------------------------------------------

def _shift_log(log: TrajectoryLog, offset: float) -> TrajectoryLog:
    if offset == 0.0:
        return log
    try:
        shifted = tuple(replace(p, timestamp=p.timestamp + offset) for p in log.samples)
    except ValueError as exc:
        raise DataError(f"clock shift by {offset} s produced an invalid timestamp: {exc}") from exc
    return replace(log, samples=shifted)


def synchronize(a: TrajectoryLog, b: TrajectoryLog, spec: SyncSpec) -> tuple[TrajectoryLog, TrajectoryLog]:
    """Apply the constant offset to whichever log is not the reference."""
    if a.agent == b.agent:
        raise DataError("synchronize needs logs from two different agents")
    if spec.reference == a.agent:
        return a, _shift_log(b, spec.offset_seconds)
    return _shift_log(a, spec.offset_seconds), b


# ---------------------------------------------------------------------------
# Synthetic trajectories
# ---------------------------------------------------------------------------

class _PlanarPath:
    """Arc-length parametrized planar curve with tangent headings."""

    def pose_at(self, s: float):  # -> (x, y, yaw)
        raise NotImplementedError

    def poses_at(self, s: np.ndarray):  # -> (x[], y[], yaw[])
        xs = np.empty(len(s))
        ys = np.empty(len(s))
        yaws = np.empty(len(s))
        for k, sk in enumerate(s):
            xs[k], ys[k], yaws[k] = self.pose_at(float(sk))
        return xs, ys, yaws


class _StraightPath(_PlanarPath):
    def pose_at(self, s):
        return s, 0.0, 0.0

    def poses_at(self, s):
        s = np.asarray(s, dtype=float)
        return s.copy(), np.zeros(len(s)), np.zeros(len(s))


class _CirclePath(_PlanarPath):
    def __init__(self, radius: float):
        self.radius = radius

    def pose_at(self, s):
        theta = s / self.radius
        x = self.radius * math.sin(theta)
        y = self.radius * (1.0 - math.cos(theta))
        return x, y, theta

    def poses_at(self, s):
        theta = np.asarray(s, dtype=float) / self.radius
        return self.radius * np.sin(theta), self.radius * (1.0 - np.cos(theta)), theta


class _SampledPath(_PlanarPath):
    """Path defined by dense samples of an underlying parametric curve.

    A cumulative chord-length table inverts arc length to curve parameter;
    headings come from the analytic derivative at that parameter.
    """

    def __init__(self, u, xy, dxy_du, closed: bool):
        self._u = u
        seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        self._s = np.concatenate([[0.0], np.cumsum(seg)])
        self._xy = xy
        self._dxy = dxy_du
        self.length = float(self._s[-1])
        self._closed = closed

    def pose_at(self, s):
        x, y, yaw = self.poses_at(np.array([s]))
        return float(x[0]), float(y[0]), float(yaw[0])

    def poses_at(self, s):
        s = np.asarray(s, dtype=float)
        if self._closed:
            s = np.fmod(s, self.length)
        elif np.any(s > self.length):
            raise ValueError(f"arc length beyond open path length {self.length}")
        x = np.interp(s, self._s, self._xy[:, 0])
        y = np.interp(s, self._s, self._xy[:, 1])
        u = np.interp(s, self._s, self._u)
        dx, dy = self._dxy(u)
        return x, y, np.arctan2(dy, dx)


def _figure_eight_path(total_length: float) -> _SampledPath:
    # Lissajous figure-eight x = A sin u, y = (A/2) sin 2u, scaled so one
    # full circuit has the requested arc length.
    u = np.linspace(0.0, 2.0 * math.pi, 20001)
    unit = np.column_stack([np.sin(u), 0.5 * np.sin(2.0 * u)])
    seg = np.linalg.norm(np.diff(unit, axis=0), axis=1)
    amplitude = total_length / float(seg.sum())
    xy = amplitude * unit

    def dxy_du(uu):
        return amplitude * np.cos(uu), amplitude * np.cos(2.0 * uu)

    return _SampledPath(u, xy, dxy_du, closed=True)


def _waypoint_spline_path(required_length: float, seed: int) -> _SampledPath:
    # A seeded meandering waypoint chain, interpolated with a cubic spline
    # and rescaled so the smooth path is comfortably long enough.
    rng = np.random.default_rng(seed)
    n_way = 9
    headings = np.cumsum(np.concatenate([[0.0], rng.uniform(-0.7, 0.7, n_way - 1)]))
    steps = np.column_stack([np.cos(headings), np.sin(headings)])
    waypoints = np.concatenate([[[0.0, 0.0]], np.cumsum(steps, axis=0)])
    chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(waypoints, axis=0), axis=1))])
    spline = CubicSpline(chord, waypoints, axis=0)
    deriv = spline.derivative()

    u = np.linspace(0.0, chord[-1], 20001)
    xy = spline(u)
    seg_len = float(np.linalg.norm(np.diff(xy, axis=0), axis=1).sum())
    scale = 1.02 * required_length / seg_len
    xy = xy * scale

    def dxy_du(uu):
        d = deriv(uu)
        return d[..., 0] * scale, d[..., 1] * scale

    return _SampledPath(u, xy, dxy_du, closed=False)


def _build_path(kind: str, follower_length: float, gap: float, seed: int) -> _PlanarPath:
    if kind == "straight":
        return _StraightPath()
    if kind == "circle":
        return _CirclePath(follower_length / (2.0 * math.pi))
    if kind == "figure-eight":
        return _figure_eight_path(follower_length)
    if kind == "waypoint-spline":
        return _waypoint_spline_path(follower_length + gap, seed)
    raise ValueError(f"unknown trajectory kind {kind!r}; choose one of {TRAJECTORY_KINDS}")


def generate_synthetic(
    kind: str,
    duration: float,
    rate: float,
    speed: float,
    seed: int = 0,
    gap: float = 5.0,
) -> tuple[TrajectoryLog, TrajectoryLog]:
    """Two smooth ground-truth logs: the follower trails the leader by ``gap``.

    Both vehicles traverse the same planar path at constant speed with
    tangent headings; the leader runs ``gap`` meters of arc length ahead.
    Closed paths (circle, figure-eight) are sized so the follower completes
    exactly one circuit in ``duration`` seconds.
    """
    if not (duration > 0.0 and rate > 0.0 and speed > 0.0):
        raise ValueError(f"duration, rate, speed must all be > 0, got {duration}, {rate}, {speed}")
    if gap < 0.0:
        raise ValueError(f"gap must be >= 0, got {gap}")
    n = int(math.floor(duration * rate + 1e-9))
    if n < 2:
        raise ValueError("duration and rate give fewer than 2 samples")
    path = _build_path(kind, duration * speed, gap, seed)

    def make_log(agent: Agent, lead: float) -> TrajectoryLog:
        child = body_frame(agent)
        t_arr = np.arange(n) / rate
        xs, ys, yaws = path.poses_at(speed * t_arr + lead)
        # fresh per-sample arrays from a validated path: trusted construction
        samples = [
            Pose._trusted(
                float(t_arr[k]),
                np.array([xs[k], ys[k], 0.0]),
                quat_yaw(float(yaws[k])),
                WORLD,
                child,
            )
            for k in range(n)
        ]
        metadata = {
            "kind": kind,
            "rate": repr(float(rate)),
            "speed": repr(float(speed)),
            "duration": repr(float(duration)),
            "gap": repr(float(gap)),
            "seed": repr(int(seed)),
        }
        return TrajectoryLog(agent, "ENU", tuple(samples), metadata)

    return make_log(Agent.SMART, gap), make_log(Agent.ADAS, 0.0)
