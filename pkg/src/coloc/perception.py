"""Simulated leader-to-follower perception channel.

Ground truth in, absolute pose measurements out: the leader and follower
world poses are paired under a strict time gate, the relative pose of the
follower as seen from the leader is computed, planar noise is injected into
that relative pose, and the result is composed back onto the leader's pose.
The noise therefore enters in the leader's body frame, exactly where a real
detector would err, and only then gets rotated out into the world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .ekf import MeasurementEvent, MeasurementKind, measurement_covariance
from .errors import DataError
from .geometry import BODY_ADAS, BODY_SMART, Pose, compose, relative_pose
from .noise import NoiseSpec, RandomStream, perturb_pose

GATE_RELATIVE_MARGIN = 1e-9
RATE_EPSILON = 1e-9

PERCEPTION_SOURCE = "smart/perception"


@dataclass(frozen=True)
class PerceptionConfig:
    """Channel settings: noise levels, pairing gate, optional output rate."""

    noise: NoiseSpec
    gate_threshold: float = 0.1
    output_rate: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gate_threshold) and self.gate_threshold > 0.0):
            raise ValueError(f"gate_threshold must be > 0, got {self.gate_threshold}")
        if self.output_rate is not None and not (
            math.isfinite(self.output_rate) and self.output_rate > 0.0
        ):
            raise ValueError(f"output_rate must be > 0 when set, got {self.output_rate}")


@dataclass(frozen=True)
class PairedSample:
    """A gated leader/follower pose pair; pair_time is the follower-side stamp."""

    smart_pose: Pose
    adas_pose: Pose
    pair_time: float

    def __post_init__(self) -> None:
        if self.smart_pose.child_frame != BODY_SMART:
            raise DataError(f"smart_pose must observe the leader body, got {self.smart_pose.child_frame}")
        if self.adas_pose.child_frame != BODY_ADAS:
            raise DataError(f"adas_pose must observe the follower body, got {self.adas_pose.child_frame}")
        if self.smart_pose.parent_frame != self.adas_pose.parent_frame:
            raise DataError("paired poses must share a parent frame")

    @property
    def timestamp(self) -> float:
        return self.pair_time


def gate_pair(smart_t: float, adas_t: float, threshold: float) -> bool:
    """Strictly inside the gate: |smart_t - adas_t| < threshold.

    The comparison carries a one-part-in-1e9 relative margin so that decimal
    timestamps landing on the boundary (where binary floating point puts the
    difference a hair under the threshold) still count as outside.
    """
    if not (math.isfinite(smart_t) and math.isfinite(adas_t)):
        raise ValueError("timestamps must be finite")
    return abs(smart_t - adas_t) < threshold * (1.0 - GATE_RELATIVE_MARGIN)


def pair_streams(
    smart_poses: Sequence[Pose], adas_poses: Sequence[Pose], gate_threshold: float
) -> list[PairedSample]:
    """Nearest-in-time pairing, then gating.

    For every follower pose the closest leader pose by timestamp is selected;
    the pair survives only if it passes :func:`gate_pair`.  Both inputs must
    be time-ordered.
    """
    smart_ts = np.array([p.timestamp for p in smart_poses])
    adas_ts = np.array([p.timestamp for p in adas_poses])
    if np.any(np.diff(smart_ts) < 0) or np.any(np.diff(adas_ts) < 0):
        raise DataError("pose streams must be time-ordered")
    pairs: list[PairedSample] = []
    if len(smart_ts) == 0:
        return pairs
    idx = np.searchsorted(smart_ts, adas_ts)
    for k, adas in enumerate(adas_poses):
        i = idx[k]
        best = None
        if i > 0:
            best = i - 1
        if i < len(smart_ts) and (
            best is None or abs(smart_ts[i] - adas_ts[k]) < abs(smart_ts[best] - adas_ts[k])
        ):
            best = i
        if gate_pair(smart_ts[best], adas_ts[k], gate_threshold):
            pairs.append(PairedSample(smart_poses[best], adas, adas.timestamp))
    return pairs


def make_measurement(
    pair: PairedSample, cfg: PerceptionConfig, rng: RandomStream
) -> MeasurementEvent:
    """One absolute follower-pose measurement from a gated pair.

    relative pose -> planar noise in the leader frame -> recomposition onto
    the leader's world pose.  With zero noise this reproduces the follower's
    ground truth exactly (up to rounding).
    """
    rel = relative_pose(pair.smart_pose, pair.adas_pose)
    noisy_rel = perturb_pose(rel, cfg.noise, rng)
    composed = compose(pair.smart_pose, noisy_rel)
    world_pose = Pose._trusted(
        pair.pair_time,
        composed.translation,
        composed.rotation,
        composed.parent_frame,
        composed.child_frame,
    )
    return MeasurementEvent(
        pair.pair_time,
        MeasurementKind.PERCEPTION_ABSOLUTE,
        world_pose,
        r6=measurement_covariance(cfg.noise),
        source=PERCEPTION_SOURCE,
    )


def rate_limit(events: Iterable, target_hz: float):
    """Deterministic decimation of a time-ordered stream to at most target_hz.

    The first event always passes; afterwards an event passes iff its
    timestamp is at least one period (minus a 1e-9 slack for floating-point
    timestamps) after the last emitted one.
    """
    if not (math.isfinite(target_hz) and target_hz > 0.0):
        raise ValueError(f"target_hz must be > 0, got {target_hz}")
    period = 1.0 / target_hz
    out = []
    last = None
    for ev in events:
        t = ev.timestamp
        if last is None or t >= last + period - RATE_EPSILON:
            out.append(ev)
            last = t
    return out


def simulate_perception(
    smart_poses: Sequence[Pose],
    adas_poses: Sequence[Pose],
    cfg: PerceptionConfig,
    rng: RandomStream,
) -> list[MeasurementEvent]:
    """The full channel: pair, gate, rate-limit, then inject noise per pair.

    Noise is drawn only for emitted pairs, so the draw sequence depends on
    the gate and rate settings but never on pairs that were dropped.
    """
    pairs = pair_streams(smart_poses, adas_poses, cfg.gate_threshold)
    if cfg.output_rate is not None:
        pairs = rate_limit(pairs, cfg.output_rate)
    return [make_measurement(pair, cfg, rng) for pair in pairs]
