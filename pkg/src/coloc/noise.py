"""Seeded, reproducible perturbation of translations and yaw rotations.

Ground-truth poses become simulated sensor outputs by adding zero-mean
Gaussian noise to the x and y translation components and to the heading.
Roll, pitch and z are never touched: the noise model is deliberately planar.

Reproducibility is structural, not incidental.  Every noise channel draws
from its own labeled stream derived from (seed, label) alone, so changing
one channel's standard deviation never shifts the sequence another channel
sees.  Ablation sweeps across one parameter therefore hold everything else
fixed draw-for-draw.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, Quaternion, quat_yaw

_SEED_MASK = (1 << 64) - 1


def _seed_sequence(seed: int, label: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4)]
    return np.random.SeedSequence([seed & _SEED_MASK, *words])


@dataclass(frozen=True)
class NoiseSpec:
    """Noise levels for one perturbation source.

    ``sigma_trans`` is the standard deviation in meters applied to x and y;
    ``gamma_yaw`` is the heading standard deviation in degrees.  Zero means
    exact pass-through on that channel.
    """

    sigma_trans: float
    gamma_yaw: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma_trans) and self.sigma_trans >= 0.0):
            raise ValueError(f"sigma_trans must be finite and >= 0, got {self.sigma_trans}")
        if not (math.isfinite(self.gamma_yaw) and self.gamma_yaw >= 0.0):
            raise ValueError(f"gamma_yaw must be finite and >= 0, got {self.gamma_yaw}")
        if not isinstance(self.seed, (int, np.integer)):
            raise ValueError(f"seed must be an integer, got {type(self.seed).__name__}")

    @property
    def gamma_yaw_rad(self) -> float:
        return math.radians(self.gamma_yaw)


class RandomStream:
    """A family of deterministic, independently labeled random substreams.

    Each label owns a private generator seeded from (seed, full label path)
    only, created lazily and cached, so the draw sequence under one label is
    invariant to what any other label draws.  Instances are single-owner
    mutable state; do not share one across threads.
    """

    def __init__(self, seed: int, label: str = "root") -> None:
        self._seed = int(seed)
        self._label = label
        self._children: dict[str, np.random.Generator] = {}

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def label(self) -> str:
        return self._label

    def derive(self, label: str) -> "RandomStream":
        """A namespaced sub-family, e.g. per agent or per run."""
        return RandomStream(self._seed, f"{self._label}/{label}")

    def _generator(self, label: str) -> np.random.Generator:
        gen = self._children.get(label)
        if gen is None:
            gen = np.random.default_rng(_seed_sequence(self._seed, f"{self._label}/{label}"))
            self._children[label] = gen
        return gen

    def standard_normal(self, label: str) -> float:
        return float(self._generator(label).standard_normal())


def perturb_translation(t, spec: NoiseSpec, rng: RandomStream) -> np.ndarray:
    """Add independent N(0, sigma_trans^2) noise to x and y; z is untouched.

    The standard normals are drawn unconditionally and scaled by sigma, so a
    zero sigma still advances the stream identically and returns the input
    values exactly.
    """
    t = np.asarray(t, dtype=float)
    out = t.copy()
    out[0] = t[0] + spec.sigma_trans * rng.standard_normal("translation-x")
    out[1] = t[1] + spec.sigma_trans * rng.standard_normal("translation-y")
    return out


def perturb_yaw(q: Quaternion, spec: NoiseSpec, rng: RandomStream) -> Quaternion:
    """Right-multiply q by a random rotation about the body z axis.

    The perturbation angle is N(0, gamma_yaw^2) with gamma converted to
    radians; gamma_yaw = 0 returns q exactly.
    """
    theta = spec.gamma_yaw_rad * rng.standard_normal("yaw")
    return q * quat_yaw(theta)


def perturb_pose(p: Pose, spec: NoiseSpec, rng: RandomStream) -> Pose:
    """Perturb translation and yaw through their independent channels.

    Frames and timestamp are preserved; only x, y and heading change.
    """
    # frames and timestamp are those of an already validated pose and the
    # perturbed components stay finite, so skip re-validation per sample
    return Pose._trusted(
        p.timestamp,
        perturb_translation(p.translation, spec, rng),
        perturb_yaw(p.rotation, spec, rng),
        p.parent_frame,
        p.child_frame,
    )
