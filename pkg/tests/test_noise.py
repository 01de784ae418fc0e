"""Noise-injection tests.

Oracles: a twin RandomStream built from the same (seed, label) reconstructs
the exact values an operation drew, which turns stochastic assertions into
exact arithmetic; distribution-level claims use Monte-Carlo estimates with
tolerance bands of a few standard errors.
"""

import math

import numpy as np
import pytest

from coloc.geometry import BODY_ADAS, BODY_SMART, Pose, Quaternion, quat_yaw, rotation_geodesic, wrap_angle
from coloc.noise import NoiseSpec, RandomStream, perturb_pose, perturb_translation, perturb_yaw

N_MC = 100_000


def twin_streams(seed=7, label="root"):
    return RandomStream(seed, label), RandomStream(seed, label)


class TestNoiseSpec:
    def test_accepts_zero_levels(self):
        spec = NoiseSpec(0.0, 0.0)
        assert spec.seed == 0

    def test_rejects_negative_or_nonfinite(self):
        with pytest.raises(ValueError):
            NoiseSpec(-0.1, 0.0)
        with pytest.raises(ValueError):
            NoiseSpec(0.0, -1.0)
        with pytest.raises(ValueError):
            NoiseSpec(math.nan, 0.0)
        with pytest.raises(ValueError):
            NoiseSpec(0.0, math.inf)

    def test_rejects_non_integer_seed(self):
        with pytest.raises(ValueError):
            NoiseSpec(1.0, 1.0, seed=1.5)

    def test_degree_radian_conversion(self):
        assert math.isclose(NoiseSpec(0.0, 180.0).gamma_yaw_rad, math.pi)


class TestRandomStream:
    def test_same_seed_and_label_bit_identical(self):
        a, b = twin_streams()
        for _ in range(100):
            assert a.standard_normal("translation-x") == b.standard_normal("translation-x")

    def test_labels_are_independent_substreams(self):
        # Interleaving draws from another label must not shift a channel.
        a, b = twin_streams()
        seq_a = []
        for _ in range(50):
            seq_a.append(a.standard_normal("translation-x"))
            a.standard_normal("yaw")
            a.standard_normal("translation-y")
        seq_b = [b.standard_normal("translation-x") for _ in range(50)]
        assert seq_a == seq_b

    def test_distinct_labels_give_distinct_sequences(self):
        s = RandomStream(3)
        xs = [s.standard_normal("translation-x") for _ in range(8)]
        ys = [s.standard_normal("translation-y") for _ in range(8)]
        assert xs != ys

    def test_distinct_seeds_give_distinct_sequences(self):
        a = RandomStream(1)
        b = RandomStream(2)
        assert [a.standard_normal("yaw") for _ in range(8)] != [b.standard_normal("yaw") for _ in range(8)]

    def test_derive_namespaces(self):
        root = RandomStream(11)
        smart = root.derive("agent/smart")
        adas = root.derive("agent/adas")
        assert smart.standard_normal("yaw") != adas.standard_normal("yaw")
        twin = RandomStream(11).derive("agent/smart")
        assert twin.label == smart.label
        smart2 = RandomStream(11, "root/agent/smart")
        assert smart2.standard_normal("yaw") == RandomStream(11).derive("agent/smart").standard_normal("yaw")

    def test_huge_and_negative_seeds_accepted(self):
        RandomStream(2**63 - 1).standard_normal("x")
        RandomStream(-5).standard_normal("x")


class TestPerturbTranslation:
    def test_zero_sigma_exact_passthrough(self):
        spec = NoiseSpec(0.0, 10.0)
        rng = RandomStream(5)
        t = np.array([1.25, -3.5, 7.0])
        out = perturb_translation(t, spec, rng)
        assert out[0] == t[0] and out[1] == t[1] and out[2] == t[2]

    def test_z_never_touched(self):
        spec = NoiseSpec(50.0, 0.0)
        rng = RandomStream(5)
        for _ in range(100):
            out = perturb_translation(np.array([0.0, 0.0, 5.0]), spec, rng)
            assert out[2] == 5.0

    def test_noise_matches_twin_stream_exactly(self):
        spec = NoiseSpec(2.5, 0.0, seed=42)
        rng, twin = twin_streams(seed=9)
        t = np.array([10.0, 20.0, 30.0])
        out = perturb_translation(t, spec, rng)
        ex = twin.standard_normal("translation-x")
        ey = twin.standard_normal("translation-y")
        assert out[0] == t[0] + 2.5 * ex
        assert out[1] == t[1] + 2.5 * ey
        assert out[2] == 30.0

    def test_monte_carlo_std(self):
        spec = NoiseSpec(2.5, 0.0)
        rng = RandomStream(123)
        t = np.zeros(3)
        xs = np.array([perturb_translation(t, spec, rng)[0] for _ in range(N_MC)])
        assert 2.45 <= xs.std(ddof=1) <= 2.55
        # Mean within 3 standard errors of zero.
        assert abs(xs.mean()) <= 3 * 2.5 / math.sqrt(N_MC)

    def test_input_not_mutated(self):
        t = np.array([1.0, 2.0, 3.0])
        perturb_translation(t, NoiseSpec(1.0, 0.0), RandomStream(0))
        assert t.tolist() == [1.0, 2.0, 3.0]


class TestPerturbYaw:
    def test_zero_gamma_exact_passthrough(self):
        spec = NoiseSpec(3.0, 0.0)
        rng = RandomStream(5)
        q = Quaternion.from_euler(0.1, -0.2, 0.3)
        out = perturb_yaw(q, spec, rng)
        assert (out.x, out.y, out.z, out.w) == (q.x, q.y, q.z, q.w)

    def test_geodesic_equals_drawn_angle_for_pure_yaw(self):
        spec = NoiseSpec(0.0, 10.0, seed=1)
        rng, twin = twin_streams(seed=4)
        for k in range(50):
            q = quat_yaw(0.1 * k - 2.0)
            out = perturb_yaw(q, spec, rng)
            theta = spec.gamma_yaw_rad * twin.standard_normal("yaw")
            assert abs(rotation_geodesic(q, out) - abs(wrap_angle(theta))) < 1e-9

    def test_right_multiplication_ordering(self):
        # Body-frame perturbation: for a tilted pose the noise spins about the
        # body z axis, not the world z axis.
        spec = NoiseSpec(0.0, 30.0, seed=0)
        rng, twin = twin_streams(seed=77)
        q = Quaternion.from_euler(0.7, 0.3, -1.1)
        out = perturb_yaw(q, spec, rng)
        theta = spec.gamma_yaw_rad * twin.standard_normal("yaw")
        expect = q * quat_yaw(theta)
        np.testing.assert_allclose(out.canonical().as_array(), expect.canonical().as_array(), atol=1e-12)
        wrong = quat_yaw(theta) * q
        assert rotation_geodesic(out, wrong) > 1e-3

    def test_unit_norm_preserved(self):
        spec = NoiseSpec(0.0, 45.0)
        rng = RandomStream(2)
        q = Quaternion.from_euler(0.5, 0.4, 0.3)
        for _ in range(100):
            q2 = perturb_yaw(q, spec, rng)
            assert math.isclose(q2.norm(), 1.0, abs_tol=1e-12)

    def test_monte_carlo_std_degrees(self):
        spec = NoiseSpec(0.0, 10.0)
        rng = RandomStream(321)
        base = quat_yaw(0.4)
        deltas = np.empty(N_MC)
        base_yaw = 0.4
        for i in range(N_MC):
            out = perturb_yaw(base, spec, rng)
            deltas[i] = wrap_angle(out.to_euler()[2] - base_yaw)
        std_deg = math.degrees(deltas.std(ddof=1))
        assert 9.8 <= std_deg <= 10.2
        assert abs(math.degrees(deltas.mean())) <= 3 * 10.0 / math.sqrt(N_MC)


class TestPerturbPose:
    def make_pose(self):
        return Pose(2.5, np.array([3.0, -1.0, 0.5]), Quaternion.from_euler(0.0, 0.0, 1.2), BODY_SMART, BODY_ADAS)

    def test_zero_noise_exact_passthrough(self):
        p = self.make_pose()
        out = perturb_pose(p, NoiseSpec(0.0, 0.0), RandomStream(0))
        assert np.array_equal(out.translation, p.translation)
        assert (out.rotation.x, out.rotation.y, out.rotation.z, out.rotation.w) == (
            p.rotation.x,
            p.rotation.y,
            p.rotation.z,
            p.rotation.w,
        )

    def test_metadata_preserved(self):
        p = self.make_pose()
        out = perturb_pose(p, NoiseSpec(1.0, 5.0), RandomStream(3))
        assert out.timestamp == p.timestamp
        assert out.parent_frame == p.parent_frame
        assert out.child_frame == p.child_frame

    def test_matches_channel_ops_exactly(self):
        p = self.make_pose()
        spec = NoiseSpec(0.3, 15.0, seed=10)
        rng, twin = twin_streams(seed=10)
        out = perturb_pose(p, spec, rng)
        t_expect = perturb_translation(p.translation, spec, twin)
        q_expect = perturb_yaw(p.rotation, spec, twin)
        assert np.array_equal(out.translation, t_expect)
        assert out.rotation.as_array().tolist() == q_expect.as_array().tolist()

    def test_monte_carlo_both_channels(self):
        # Statistics at one of the sweep operating points (0.3 m, 15 deg).
        p = self.make_pose()
        spec = NoiseSpec(0.3, 15.0)
        rng = RandomStream(999)
        dx = np.empty(N_MC)
        dyaw = np.empty(N_MC)
        base_yaw = p.rotation.to_euler()[2]
        for i in range(N_MC):
            out = perturb_pose(p, spec, rng)
            dx[i] = out.translation[0] - p.translation[0]
            dyaw[i] = wrap_angle(out.rotation.to_euler()[2] - base_yaw)
        assert 0.294 <= dx.std(ddof=1) <= 0.306
        assert 14.7 <= math.degrees(dyaw.std(ddof=1)) <= 15.3
        assert abs(dx.mean()) <= 3 * 0.3 / math.sqrt(N_MC)
        assert out.translation[2] == p.translation[2]

    def test_gamma_change_leaves_translation_sequence_fixed(self):
        p = self.make_pose()
        rng_a = RandomStream(5)
        rng_b = RandomStream(5)
        out_a = [perturb_pose(p, NoiseSpec(0.5, 1.0), rng_a).translation for _ in range(20)]
        out_b = [perturb_pose(p, NoiseSpec(0.5, 25.0), rng_b).translation for _ in range(20)]
        for ta, tb in zip(out_a, out_b):
            assert np.array_equal(ta, tb)

    def test_sigma_change_leaves_yaw_sequence_fixed(self):
        p = self.make_pose()
        rng_a = RandomStream(5)
        rng_b = RandomStream(5)
        out_a = [perturb_pose(p, NoiseSpec(0.1, 8.0), rng_a).rotation.as_array() for _ in range(20)]
        out_b = [perturb_pose(p, NoiseSpec(9.0, 8.0), rng_b).rotation.as_array() for _ in range(20)]
        for qa, qb in zip(out_a, out_b):
            assert np.array_equal(qa, qb)

    def test_deterministic_across_runs(self):
        p = self.make_pose()
        spec = NoiseSpec(0.7, 3.0)
        a = perturb_pose(p, spec, RandomStream(77))
        b = perturb_pose(p, spec, RandomStream(77))
        assert np.array_equal(a.translation, b.translation)
        assert a.rotation.as_array().tolist() == b.rotation.as_array().tolist()
