"""15-state extended Kalman filter and the two-node fusion chain.

State layout (index order is load-bearing for every slice below):

====  =========================  ======
0:3   world/local position       m
3:6   orientation roll/pitch/yaw rad
6:9   body-frame linear velocity m/s
9:12  body angular velocity      rad/s
12:15 body linear acceleration   m/s^2
====  =========================  ======

The motion model is the standard rigid-body kinematic one: position
integrates the body velocity rotated into the parent frame, orientation
integrates body rates through the Euler-rate matrix, velocity integrates
acceleration, and the remaining derivatives hold constant between events.

Node 1 runs in the local (start) frame and fuses raw follower poses
absolutely, acting as a smoother that outputs the local->body transform.
Node 2 runs in the world frame; it turns consecutive smoothed odometry poses
into body-velocity pseudo-measurements (differential fusion, immune to any
constant offset) and fuses perception-derived world poses absolutely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from .errors import FrameMismatchError, NumericError, OutOfOrderError
from .geometry import (
    BODY_ADAS,
    LOCAL,
    WORLD,
    Frame,
    Pose,
    Quaternion,
    compose,
    wrap_angle,
)
from .noise import NoiseSpec

STATE_DIM = 15
POS = slice(0, 3)
ANG = slice(3, 6)
VEL = slice(6, 9)
OMEGA = slice(9, 12)
ACC = slice(12, 15)
POSE_BLOCK = slice(0, 6)
TWIST_BLOCK = slice(6, 12)

_MIN_COS_PITCH = 1e-9

# Default continuous-time process noise (variance per second) per state.
# Pose states get moderate values, velocity slightly less, acceleration least;
# these are conventional ground-vehicle settings and are exposed as config.
DEFAULT_PROCESS_NOISE_DIAG = np.array(
    [
        0.05, 0.05, 0.06,       # position
        0.03, 0.03, 0.06,       # roll, pitch, yaw
        0.025, 0.025, 0.04,     # linear velocity
        0.01, 0.01, 0.02,       # angular velocity
        0.01, 0.01, 0.015,      # linear acceleration
    ]
)


def default_process_noise() -> np.ndarray:
    return np.diag(DEFAULT_PROCESS_NOISE_DIAG)


@lru_cache(maxsize=256)
def _diag_r6(s2: float, g2: float, floor: float) -> np.ndarray:
    r6 = np.diag([s2, s2, floor, floor, floor, g2])
    r6.flags.writeable = False
    return r6


def measurement_covariance(spec: NoiseSpec, floor: float = 1e-6) -> np.ndarray:
    """Diagonal 6x6 pose covariance implied by a noise spec.

    x, y and yaw carry the injected variances; z, roll and pitch receive the
    floor since no noise is ever injected there, and the floor also keeps
    zero-noise channels invertible.  The returned array is read-only and may
    be shared between calls with equal parameters.
    """
    if not (math.isfinite(floor) and floor > 0.0):
        raise ValueError(f"floor must be finite and > 0, got {floor}")
    s2 = max(spec.sigma_trans**2, floor)
    g2 = max(spec.gamma_yaw_rad**2, floor)
    return _diag_r6(s2, g2, floor)


# ---------------------------------------------------------------------------
# State and model types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateEstimate:
    """Filter state: 15-vector, covariance and time.

    Construction enforces shape and finiteness and symmetrizes P exactly;
    the PSD invariant is cheap to break-check but expensive to verify every
    step, so :meth:`validate` performs the full eigenvalue test on demand.
    """

    x: np.ndarray
    P: np.ndarray
    timestamp: float

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if x.shape != (STATE_DIM,):
            raise ValueError(f"state must have shape ({STATE_DIM},), got {x.shape}")
        if P.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"covariance must be {STATE_DIM}x{STATE_DIM}, got {P.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError("state vector contains non-finite values")
        if not np.all(np.isfinite(P)):
            raise NumericError("covariance contains non-finite values")
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        P = 0.5 * (P + P.T)
        P.flags.writeable = False
        x = x.copy()
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)

    @classmethod
    def _trusted(cls, x: np.ndarray, P: np.ndarray, timestamp: float) -> "StateEstimate":
        """Construction fast path for the filter loop.

        The caller guarantees fresh float arrays of the right shape; only the
        finiteness invariant is still checked since it is the one numerical
        failures actually break.  A single NaN or inf anywhere makes the sum
        non-finite (inf - inf is NaN), and well-scaled filter values cannot
        overflow the sum, so this is a complete check at a fraction of the
        cost of isfinite over every entry.
        """
        if not (math.isfinite(float(x.sum())) and math.isfinite(float(P.sum()))):
            raise NumericError("filter produced non-finite state or covariance")
        P = 0.5 * (P + P.T)
        P.flags.writeable = False
        x.flags.writeable = False
        s = object.__new__(cls)
        object.__setattr__(s, "x", x)
        object.__setattr__(s, "P", P)
        object.__setattr__(s, "timestamp", timestamp)
        return s

    def validate(self, atol: float = 1e-9) -> None:
        """Full covariance health check: symmetry and positive semi-definiteness."""
        if not np.allclose(self.P, self.P.T, atol=atol):
            raise NumericError("covariance is not symmetric")
        if np.linalg.eigvalsh(self.P).min() < -atol:
            raise NumericError("covariance has a significantly negative eigenvalue")
        ang = self.x[ANG]
        if np.any(ang > math.pi) or np.any(ang <= -math.pi):
            raise NumericError("orientation angles are not wrapped to (-pi, pi]")

    def pose(self, parent: Frame, child: Frame = BODY_ADAS) -> Pose:
        if parent == child:
            raise FrameMismatchError(f"pose frames must differ, got {parent} twice")
        return Pose._trusted(
            self.timestamp,
            self.x[POS].copy(),
            Quaternion.from_euler(*self.x[ANG]),
            parent,
            child,
        )


def state_from_pose(
    pose: Pose,
    pose_variance: float = 1e-6,
    derivative_variance: float = 1e3,
) -> StateEstimate:
    """Initial state anchored at a known pose with zero derivatives.

    Small variance on the pose block (the start is known), large on the
    derivative blocks (velocities must be learned from data).
    """
    x = np.zeros(STATE_DIM)
    x[POS] = pose.translation
    x[ANG] = pose.rotation.to_euler()
    diag = np.full(STATE_DIM, derivative_variance)
    diag[POSE_BLOCK] = pose_variance
    return StateEstimate(x, np.diag(diag), pose.timestamp)


class MeasurementKind(Enum):
    ODOMETRY_DIFFERENTIAL = "odometry_differential"
    PERCEPTION_ABSOLUTE = "perception_absolute"


@dataclass(frozen=True)
class MeasurementEvent:
    """One timestamped pose measurement heading into a filter node.

    ``r6`` is the 6x6 covariance of (x, y, z, roll, pitch, yaw); when None,
    the node substitutes its configured per-channel default.
    """

    timestamp: float
    kind: MeasurementKind
    pose: Pose
    r6: np.ndarray | None = None
    source: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.timestamp):
            raise ValueError("event timestamp must be finite")
        r6 = self.r6
        if r6 is not None:
            # Read-only float arrays only come out of the package's own
            # covariance constructors, which already validated them; this
            # runs once per event on a hot path.
            if (
                isinstance(r6, np.ndarray)
                and r6.dtype == np.float64
                and not r6.flags.writeable
            ):
                if r6.shape != (6, 6):
                    raise ValueError(f"r6 must be 6x6, got {r6.shape}")
                return
            r6 = np.asarray(r6, dtype=float)
            if r6.shape != (6, 6):
                raise ValueError(f"r6 must be 6x6, got {r6.shape}")
            if not np.isfinite(r6).all():
                raise NumericError("r6 contains non-finite values")
            if np.abs(r6 - r6.T).max() > 1e-9:
                raise ValueError("r6 must be symmetric")
            if (np.diagonal(r6) < 0.0).any():
                raise ValueError("r6 has negative diagonal entries")
            object.__setattr__(self, "r6", r6)


@dataclass(frozen=True)
class ProcessModel:
    """Process noise plus hooks for the transition and its Jacobian."""

    q: np.ndarray
    transition: Callable[[np.ndarray, float], np.ndarray] = None  # type: ignore[assignment]
    jacobian: Callable[[np.ndarray, float], np.ndarray] = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        if q.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"Q must be {STATE_DIM}x{STATE_DIM}, got {q.shape}")
        if not np.allclose(q, q.T, atol=1e-9):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(q).min() < -1e-9:
            raise ValueError("Q must be positive semi-definite")
        object.__setattr__(self, "q", 0.5 * (q + q.T))
        if self.transition is None:
            object.__setattr__(self, "transition", transition)
        if self.jacobian is None:
            object.__setattr__(self, "jacobian", transition_jacobian)


class NodeId(Enum):
    NODE1 = "node1"
    NODE2 = "node2"


@dataclass(frozen=True)
class FilterNodeConfig:
    """Everything one filter node needs: init, process noise, channel noise.

    Node 1 estimates in the local frame and ignores ``world_to_local``;
    node 2 estimates in the world frame and requires it.
    """

    node_id: NodeId
    initial_state: StateEstimate
    q: np.ndarray
    default_r6: Mapping[MeasurementKind, np.ndarray] = field(default_factory=dict)
    world_to_local: Pose | None = None
    max_predict_dt: float = 1.0
    predict_substep: float = 0.1

    def __post_init__(self) -> None:
        if self.node_id is NodeId.NODE2:
            if self.world_to_local is None:
                raise ValueError("node 2 requires world_to_local")
            w2l = self.world_to_local
            if w2l.parent_frame != WORLD or w2l.child_frame != LOCAL:
                raise FrameMismatchError(
                    f"world_to_local must map local into world, got {w2l.parent_frame}<-{w2l.child_frame}"
                )
        if not (self.max_predict_dt > 0.0 and self.predict_substep > 0.0):
            raise ValueError("prediction step limits must be positive")
        if self.default_r6:
            # validate once here so per-event resolution can trust the entries
            checked: dict[MeasurementKind, np.ndarray] = {}
            for kind, r6 in self.default_r6.items():
                arr = np.asarray(r6, dtype=float)
                if arr.shape != (6, 6):
                    raise ValueError(f"default r6 for {kind} must be 6x6, got {arr.shape}")
                if not np.isfinite(arr).all():
                    raise NumericError(f"default r6 for {kind} contains non-finite values")
                if np.abs(arr - arr.T).max() > 1e-9:
                    raise ValueError(f"default r6 for {kind} must be symmetric")
                if (np.diagonal(arr) < 0.0).any():
                    raise ValueError(f"default r6 for {kind} has negative diagonal entries")
                if arr.flags.writeable:
                    arr = arr.copy()
                    arr.flags.writeable = False
                checked[kind] = arr
            object.__setattr__(self, "default_r6", checked)

    @property
    def estimation_frame(self) -> Frame:
        return LOCAL if self.node_id is NodeId.NODE1 else WORLD


# ---------------------------------------------------------------------------
# Transition model
# ---------------------------------------------------------------------------

def _rotation_and_partials(roll: float, pitch: float, yaw: float):
    """Body->parent rotation Rz(yaw)Ry(pitch)Rx(roll) and its three partials.

    All four matrices are the expanded products, spelled out element by
    element so no 3x3 multiplications run on this per-event path.
    """
    sr, cr = math.sin(roll), math.cos(roll)
    sp, cp = math.sin(pitch), math.cos(pitch)
    sy, cy = math.sin(yaw), math.cos(yaw)
    spsr, spcr = sp * sr, sp * cr
    R = np.array([
        [cy * cp, cy * spsr - sy * cr, cy * spcr + sy * sr],
        [sy * cp, sy * spsr + cy * cr, sy * spcr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])
    dR_droll = np.array([
        [0.0, cy * spcr + sy * sr, -cy * spsr + sy * cr],
        [0.0, sy * spcr - cy * sr, -sy * spsr - cy * cr],
        [0.0, cp * cr, -cp * sr],
    ])
    dR_dpitch = np.array([
        [-cy * sp, cy * cp * sr, cy * cp * cr],
        [-sy * sp, sy * cp * sr, sy * cp * cr],
        [-cp, -spsr, -spcr],
    ])
    dR_dyaw = np.array([
        [-sy * cp, -sy * spsr - cy * cr, -sy * spcr + cy * sr],
        [cy * cp, cy * spsr - sy * cr, cy * spcr + sy * sr],
        [0.0, 0.0, 0.0],
    ])
    return R, dR_droll, dR_dpitch, dR_dyaw


def _euler_rates_and_partials(roll: float, pitch: float):
    """Body-rate -> Euler-rate matrix E and its partials w.r.t. roll and pitch."""
    sr, cr = math.sin(roll), math.cos(roll)
    cp = math.cos(pitch)
    if abs(cp) < _MIN_COS_PITCH:
        raise NumericError(f"pitch {pitch} is at the gimbal singularity")
    tp = math.tan(pitch)
    E = np.array([[1.0, sr * tp, cr * tp], [0.0, cr, -sr], [0.0, sr / cp, cr / cp]])
    dE_droll = np.array([[0.0, cr * tp, -sr * tp], [0.0, -sr, -cr], [0.0, cr / cp, -sr / cp]])
    sec2 = 1.0 / (cp * cp)
    dE_dpitch = np.array(
        [[0.0, sr * sec2, cr * sec2], [0.0, 0.0, 0.0], [0.0, sr * tp / cp, cr * tp / cp]]
    )
    return E, dE_droll, dE_dpitch


def transition(x: np.ndarray, dt: float) -> np.ndarray:
    """Propagate the 15-state rigid-body model by dt seconds."""
    x = np.asarray(x, dtype=float)
    roll, pitch, yaw = x[ANG]
    R, _, _, _ = _rotation_and_partials(roll, pitch, yaw)
    E, _, _ = _euler_rates_and_partials(roll, pitch)
    out = x.copy()
    disp = x[VEL] * dt + (0.5 * dt * dt) * x[ACC]
    out[POS] = x[POS] + R @ disp
    out[ANG] = wrap_angle(x[ANG] + E @ x[OMEGA] * dt)
    out[VEL] = x[VEL] + x[ACC] * dt
    return out


def transition_jacobian(x: np.ndarray, dt: float) -> np.ndarray:
    """Analytic Jacobian of :func:`transition` at x."""
    x = np.asarray(x, dtype=float)
    return _transition_with_jacobian(x, dt)[1]


_EYE_STATE = np.eye(STATE_DIM)
_EYE_STATE.flags.writeable = False


def _transition_with_jacobian(x: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Propagated state and Jacobian sharing one trigonometry evaluation."""
    roll, pitch, yaw = x[ANG]
    R, dR_dr, dR_dp, dR_dy = _rotation_and_partials(roll, pitch, yaw)
    E, dE_dr, dE_dp = _euler_rates_and_partials(roll, pitch)
    half_dt2 = 0.5 * dt * dt
    disp = x[VEL] * dt + half_dt2 * x[ACC]
    omega = x[OMEGA]
    out = x.copy()
    out[POS] = x[POS] + R @ disp
    out[ANG] = wrap_angle(x[ANG] + E @ omega * dt)
    out[VEL] = x[VEL] + x[ACC] * dt
    # column-by-column assembly; yaw never enters the Euler-rate matrix,
    # so the third column of that block stays the identity's
    A = _EYE_STATE.copy()
    A[0:3, 3] = dR_dr @ disp
    A[0:3, 4] = dR_dp @ disp
    A[0:3, 5] = dR_dy @ disp
    A[POS, VEL] = R * dt
    A[POS, ACC] = R * half_dt2
    A[3:6, 3] += (dE_dr @ omega) * dt
    A[3:6, 4] += (dE_dp @ omega) * dt
    A[ANG, OMEGA] = E * dt
    A[6, 12] = dt
    A[7, 13] = dt
    A[8, 14] = dt
    return out, A


# ---------------------------------------------------------------------------
# Filter operations
# ---------------------------------------------------------------------------

def predict(s: StateEstimate, model: ProcessModel, dt: float) -> StateEstimate:
    """Propagate state and covariance: x <- f(x, dt), P <- A P A^T + Q dt.

    dt = 0 is an exact no-op (same object); negative dt is a caller bug.
    """
    if not math.isfinite(dt) or dt < 0.0:
        raise ValueError(f"dt must be finite and >= 0, got {dt}")
    if dt == 0.0:
        return s
    if model.transition is transition and model.jacobian is transition_jacobian:
        x, A = _transition_with_jacobian(s.x, dt)
        P = A @ s.P @ A.T + model.q * dt
        return StateEstimate._trusted(x, P, s.timestamp + dt)
    x = model.transition(s.x, dt)
    A = model.jacobian(s.x, dt)
    P = A @ s.P @ A.T + model.q * dt
    return StateEstimate(x, P, s.timestamp + dt)


def _pose_to_vector(pose: Pose) -> np.ndarray:
    z = np.empty(6)
    z[0:3] = pose.translation
    z[3:6] = pose.rotation.to_euler()
    return z


def _block_update(
    s: StateEstimate, idx: slice, z: np.ndarray, r6: np.ndarray, wrap: np.ndarray | None
) -> StateEstimate:
    """Joseph-form EKF update where H selects one contiguous 6-state block."""
    if not np.all(np.isfinite(z)):
        raise NumericError("measurement contains non-finite values")
    innovation = z - s.x[idx]
    if wrap is not None:
        innovation[wrap] = wrap_angle(innovation[wrap])
    P_rows = s.P[idx, :]
    S = P_rows[:, idx] + r6
    try:
        K = np.linalg.solve(S, P_rows).T
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular innovation covariance: {exc}") from exc
    x = s.x + K @ innovation
    x[ANG] = wrap_angle(x[ANG])
    # Joseph form: (I-KH) P (I-KH)^T + K R K^T with H a selector matrix.
    M = s.P - K @ P_rows
    P = M - M[:, idx] @ K.T + K @ r6 @ K.T
    return StateEstimate._trusted(x, P, s.timestamp)


_POSE_ANGLE_IDX = np.array([3, 4, 5])


def update_absolute(s: StateEstimate, m: MeasurementEvent) -> StateEstimate:
    """Fuse a pose measurement directly against the 6 pose states.

    The measurement model is the identity on the pose block; angular
    innovation components are wrapped so +179 deg vs -179 deg disagree by
    2 degrees, not 358.
    """
    if m.r6 is None:
        raise ValueError("event carries no covariance and no default was applied")
    z = _pose_to_vector(m.pose)
    return _block_update(s, POSE_BLOCK, z, m.r6, _POSE_ANGLE_IDX)


def differential_velocity(prev: MeasurementEvent, cur: MeasurementEvent) -> np.ndarray:
    """Body-frame velocity pseudo-measurement from two consecutive poses.

    The delta pose invert(prev) o cur divided by dt; any constant offset
    applied to both poses cancels exactly.
    """
    dt = cur.timestamp - prev.timestamp
    if dt <= 0.0:
        raise ValueError(f"differential pair must be strictly time-ordered, dt={dt}")
    if prev.source != cur.source:
        raise ValueError(f"differential pair from mixed sources: {prev.source!r} vs {cur.source!r}")
    q_prev = prev.pose.rotation
    d_t = q_prev.conjugate().rotate(cur.pose.translation - prev.pose.translation)
    d_q = q_prev.conjugate() * cur.pose.rotation
    z = np.empty(6)
    z[0:3] = d_t / dt
    z[3:6] = d_q.rotation_vector() / dt
    return z


def update_differential(
    s: StateEstimate, prev: MeasurementEvent, cur: MeasurementEvent
) -> StateEstimate:
    """Fuse a pose pair as a velocity pseudo-measurement on the twist states.

    The pair's pose covariances propagate to the velocity measurement as
    (R_prev + R_cur) / dt^2.
    """
    if prev.kind is not MeasurementKind.ODOMETRY_DIFFERENTIAL or cur.kind is not MeasurementKind.ODOMETRY_DIFFERENTIAL:
        raise ValueError("differential fusion requires odometry events")
    if prev.r6 is None or cur.r6 is None:
        raise ValueError("differential fusion requires covariances on both events")
    z = differential_velocity(prev, cur)
    dt = cur.timestamp - prev.timestamp
    r_vel = (prev.r6 + cur.r6) / (dt * dt)
    return _block_update(s, TWIST_BLOCK, z, r_vel, None)


# ---------------------------------------------------------------------------
# Filter nodes
# ---------------------------------------------------------------------------

class EkfNode:
    """Sequential, single-owner filter node.

    Events must arrive with non-decreasing timestamps; an older event is
    rejected with :class:`OutOfOrderError`, counted, and leaves the state
    untouched, so callers may continue with newer events.
    """

    def __init__(self, config: FilterNodeConfig) -> None:
        self.config = config
        self.model = ProcessModel(config.q)
        self.state = config.initial_state
        self.rejected_count = 0
        self._started = False
        self._prev_odometry: MeasurementEvent | None = None

    def _admit(self, event: MeasurementEvent) -> None:
        if not self._started:
            # Align the filter clock with the first event ever seen.
            self.state = replace(self.state, timestamp=event.timestamp)
            self._started = True
            return
        if event.timestamp < self.state.timestamp:
            self.rejected_count += 1
            raise OutOfOrderError(
                f"event at t={event.timestamp} is older than filter time t={self.state.timestamp}"
            )

    def _predict_to(self, t: float) -> None:
        dt = t - self.state.timestamp
        if dt <= 0.0:
            return
        if dt <= self.config.max_predict_dt:
            self.state = predict(self.state, self.model, dt)
            return
        # A long gap would stretch one linearization too far; split it.
        n = max(1, math.ceil(dt / self.config.predict_substep))
        step = dt / n
        for _ in range(n):
            self.state = predict(self.state, self.model, step)

    def _with_default_r6(self, event: MeasurementEvent) -> MeasurementEvent:
        if event.r6 is not None:
            return event
        return replace(event, r6=self._resolve_r6(event))

    def _resolve_r6(self, event: MeasurementEvent) -> np.ndarray:
        if event.r6 is not None:
            return event.r6
        default = self.config.default_r6.get(event.kind)
        if default is None:
            raise ValueError(f"no covariance on event and no default for {event.kind}")
        return default

    def _check_frame(self, pose: Pose) -> None:
        if pose.parent_frame != self.config.estimation_frame:
            raise FrameMismatchError(
                f"{self.config.node_id.value} estimates in {self.config.estimation_frame}, "
                f"got a measurement in {pose.parent_frame}"
            )

    def pose_estimate(self) -> Pose:
        return self.state.pose(self.config.estimation_frame, BODY_ADAS)

    def node1_step(self, event: MeasurementEvent) -> Pose:
        """Absolute fusion of one raw local-frame pose; returns local->body."""
        self._check_frame(event.pose)
        self._admit(event)
        r6 = self._resolve_r6(event)
        self._predict_to(event.timestamp)
        self.state = _block_update(
            self.state, POSE_BLOCK, _pose_to_vector(event.pose), r6, _POSE_ANGLE_IDX
        )
        return self.pose_estimate()

    def node2_step(self, event: MeasurementEvent, local_to_body: Pose | None = None) -> StateEstimate:
        """World-frame fusion step.

        Odometry events require the current local->body transform from node 1;
        the world pose world_to_local o local_to_body joins the differential
        chain.  Perception events carry world poses and fuse absolutely.
        """
        self._admit(event)
        if event.kind is MeasurementKind.ODOMETRY_DIFFERENTIAL:
            if local_to_body is None:
                raise ValueError("odometry events need the node-1 local->body transform")
            world_pose = compose(self.config.world_to_local, local_to_body)
            cur = MeasurementEvent(
                event.timestamp,
                event.kind,
                world_pose,
                r6=self._resolve_r6(event),
                source=event.source,
            )
            self._predict_to(event.timestamp)
            if self._prev_odometry is not None:
                self.state = update_differential(self.state, self._prev_odometry, cur)
            self._prev_odometry = cur
        else:
            self._check_frame(event.pose)
            r6 = self._resolve_r6(event)
            self._predict_to(event.timestamp)
            self.state = _block_update(
                self.state, POSE_BLOCK, _pose_to_vector(event.pose), r6, _POSE_ANGLE_IDX
            )
        return self.state


class TwoStageLocalizer:
    """Node 1 and node 2 chained: raw odometry in, world-frame estimate out."""

    def __init__(self, node1_config: FilterNodeConfig, node2_config: FilterNodeConfig) -> None:
        if node1_config.node_id is not NodeId.NODE1 or node2_config.node_id is not NodeId.NODE2:
            raise ValueError("configs must be for node 1 and node 2 respectively")
        self.node1 = EkfNode(node1_config)
        self.node2 = EkfNode(node2_config)

    def process_odometry(self, event: MeasurementEvent) -> StateEstimate:
        """Feed one raw local-frame odometry event through both nodes."""
        local_to_body = self.node1.node1_step(event)
        return self.node2.node2_step(event, local_to_body)

    def process_perception(self, event: MeasurementEvent) -> StateEstimate:
        """Feed one world-frame perception event into node 2."""
        return self.node2.node2_step(event)

    @property
    def state(self) -> StateEstimate:
        return self.node2.state

    def pose_estimate(self) -> Pose:
        return self.node2.pose_estimate()

    @property
    def rejected_count(self) -> int:
        return self.node1.rejected_count + self.node2.rejected_count
