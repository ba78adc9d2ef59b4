import math

import numpy as np
import pytest

from policyarena.errors import NumericalInstability, OptimizationFailed
from policyarena.sysid import (
    AnnealConfig,
    EePoseTrajectory,
    GainBounds,
    PDGains,
    anneal_gains,
    reference_plant,
    rotation_distance,
    trajectory_loss,
)


def axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [
            [0, -axis[2], axis[1]],
            [axis[2], 0, -axis[0]],
            [-axis[1], axis[0], 0],
        ]
    )
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def step_commands(t_steps=60, lo=0.0, hi=0.1):
    cmds = np.zeros((t_steps, 3))
    cmds[: t_steps // 2] = lo
    cmds[t_steps // 2 :] = (hi, -hi, 0.5 * hi)
    return cmds


# The semi-implicit integrator needs dt * kd / m < 2; use a step small
# enough that the whole default gain box simulates.
FINE_DT = 0.001


def fine_plant(gains, cmds):
    return reference_plant(gains, cmds, dt=FINE_DT)


def grid_loss(gt, gains, cmds):
    try:
        return trajectory_loss(gt, fine_plant(gains, cmds))
    except NumericalInstability:
        return math.inf


class TestRotationDistance:
    def test_identical_is_zero(self):
        r = axis_angle([1, 2, 3], 0.7)
        assert rotation_distance(r, r) == 0.0

    def test_half_geodesic_angle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            axis = rng.normal(size=3)
            angle = rng.uniform(0.0, math.pi)
            d = rotation_distance(np.eye(3), axis_angle(axis, angle))
            assert d == pytest.approx(angle / 2.0, abs=1e-9)

    def test_symmetric(self):
        a = axis_angle([1, 0, 0], 0.4)
        b = axis_angle([0, 1, 1], 1.1)
        assert rotation_distance(a, b) == pytest.approx(rotation_distance(b, a))

    def test_left_invariant(self):
        rng = np.random.default_rng(1)
        a = axis_angle(rng.normal(size=3), 0.9)
        b = axis_angle(rng.normal(size=3), 1.7)
        q = axis_angle(rng.normal(size=3), 0.3)
        assert rotation_distance(q @ a, q @ b) == pytest.approx(
            rotation_distance(a, b), abs=1e-9
        )

    def test_max_at_pi(self):
        d = rotation_distance(np.eye(3), axis_angle([0, 0, 1], math.pi))
        assert d == pytest.approx(math.pi / 2.0, abs=1e-9)

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            rotation_distance(np.eye(3), 2.0 * np.eye(3))


class TestTrajectoryLoss:
    def test_identical_is_zero(self):
        traj = fine_plant(PDGains(5000.0, 300.0), step_commands())
        assert trajectory_loss(traj, traj) == 0.0

    def test_hand_sum(self):
        eye = np.broadcast_to(np.eye(3), (2, 3, 3)).copy()
        gt = EePoseTrajectory(np.array([[0.0, 0, 0], [1.0, 0, 0]]), eye)
        rot = np.stack([np.eye(3), axis_angle([0, 0, 1], 0.5)])
        sim = EePoseTrajectory(np.array([[0.0, 3, 4], [1.0, 0, 0]]), rot)
        # position errors 5 + 0, rotation errors 0 + 0.25
        assert trajectory_loss(gt, sim) == pytest.approx(5.25, abs=1e-9)

    def test_length_mismatch(self):
        eye = np.broadcast_to(np.eye(3), (2, 3, 3)).copy()
        gt = EePoseTrajectory(np.zeros((2, 3)), eye)
        sim = EePoseTrajectory(np.zeros((3, 3)), np.broadcast_to(np.eye(3), (3, 3, 3)))
        with pytest.raises(ValueError):
            trajectory_loss(gt, sim)


class TestReferencePlant:
    def test_constant_command_is_fixed_point(self):
        cmds = np.tile([0.2, -0.1, 0.3], (50, 1))
        traj = reference_plant(PDGains(4000.0, 200.0), cmds)
        assert np.allclose(traj.positions, cmds)

    def test_step_response_settles_on_target(self):
        cmds = step_commands(600)
        traj = fine_plant(PDGains(3000.0, 150.0), cmds)
        assert np.allclose(traj.positions[-1], cmds[-1], atol=1e-3)

    def test_orientations_identity(self):
        traj = reference_plant(PDGains(3000.0, 100.0), step_commands())
        assert np.allclose(traj.orientations, np.eye(3))

    def test_matches_linear_recurrence_oracle(self):
        # One axis of the plant is the affine map [v; x; 1] -> M [v; x; 1];
        # compare against explicit matrix powers.
        kp, kd, dt, mass, cmd = 2500.0, 150.0, 0.01, 2.0, 0.25
        m = np.array(
            [
                [1 - dt * kd / mass, -dt * kp / mass, dt * kp * cmd / mass],
                [dt * (1 - dt * kd / mass), 1 - dt * dt * kp / mass,
                 dt * dt * kp * cmd / mass],
                [0.0, 0.0, 1.0],
            ]
        )
        t_steps = 40
        cmds = np.column_stack([np.full(t_steps, cmd), np.zeros(t_steps), np.zeros(t_steps)])
        traj = reference_plant(PDGains(kp, kd), cmds, dt=dt, mass=mass)
        # the state starts at the first command, so a constant command is inert
        assert np.allclose(traj.positions[:, 0], cmd)
        # a genuine transient: the command jumps after the first step
        cmds2 = cmds.copy()
        cmds2[1:, 0] = cmd + 0.1
        traj2 = reference_plant(PDGains(kp, kd), cmds2, dt=dt, mass=mass)
        m2 = m.copy()
        m2[0, 2] = dt * kp * (cmd + 0.1) / mass
        m2[1, 2] = dt * m2[0, 2]
        state = np.array([0.0, cmd, 1.0])
        expected = []
        # step 0 uses the original command
        state = m @ state
        expected.append(state[1])
        for _ in range(1, t_steps):
            state = m2 @ state
            expected.append(state[1])
        assert np.allclose(traj2.positions[:, 0], expected, atol=1e-12)

    def test_blow_up_guard(self):
        # dt * sqrt(kp / m) far beyond the stability limit of the integrator
        cmds = step_commands(5000, lo=0.0, hi=1.0)
        with pytest.raises(NumericalInstability):
            reference_plant(PDGains(15000.0, 10.0), cmds, dt=0.1, mass=0.01)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            reference_plant(PDGains(100.0, 1.0), np.zeros((4, 2)))
        with pytest.raises(ValueError):
            reference_plant(PDGains(100.0, 1.0), np.zeros((4, 3)), dt=0.0)


class TestGainBounds:
    def test_clip_and_midpoint(self):
        b = GainBounds(kp=(100.0, 200.0), kd=(1.0, 3.0))
        assert b.clip(50.0, 10.0) == PDGains(100.0, 3.0)
        assert b.clip(150.0, 2.0) == PDGains(150.0, 2.0)
        assert b.midpoint() == PDGains(150.0, 2.0)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            GainBounds(kp=(5.0, 5.0), kd=(1.0, 2.0))


class TestAnnealGains:
    BOUNDS = GainBounds(kp=(2000.0, 15000.0), kd=(10.0, 2000.0))

    def make_problem(self, true_gains=PDGains(8000.0, 600.0), t_steps=60):
        cmds = step_commands(t_steps)
        gt = fine_plant(true_gains, cmds)
        return cmds, gt

    def test_deterministic_given_seed(self):
        cmds, gt = self.make_problem()
        cfg = AnnealConfig(steps=300, seed=42)
        a = anneal_gains(fine_plant, cmds, gt, self.BOUNDS, cfg)
        b = anneal_gains(fine_plant, cmds, gt, self.BOUNDS, cfg)
        assert a == b

    def test_trace_monotone_and_sized(self):
        cmds, gt = self.make_problem()
        cfg = AnnealConfig(steps=400, seed=3)
        _, best_loss, trace = anneal_gains(fine_plant, cmds, gt, self.BOUNDS, cfg)
        assert len(trace) == cfg.steps
        assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))
        assert trace[-1] == best_loss

    def test_result_within_bounds(self):
        cmds, gt = self.make_problem()
        gains, _, _ = anneal_gains(
            fine_plant, cmds, gt, self.BOUNDS, AnnealConfig(steps=500, seed=7)
        )
        assert self.BOUNDS.kp[0] <= gains.kp <= self.BOUNDS.kp[1]
        assert self.BOUNDS.kd[0] <= gains.kd <= self.BOUNDS.kd[1]

    def test_beats_coarse_grid(self):
        cmds, gt = self.make_problem()
        gains, best_loss, _ = anneal_gains(
            fine_plant, cmds, gt, self.BOUNDS, AnnealConfig(steps=1500, seed=0)
        )
        grid_losses = [
            grid_loss(gt, PDGains(kp, kd), cmds)
            for kp in np.linspace(*self.BOUNDS.kp, 15)
            for kd in np.linspace(*self.BOUNDS.kd, 15)
        ]
        assert best_loss <= min(grid_losses) + 1e-9

    def test_recovers_true_gains_loss(self):
        cmds, gt = self.make_problem()
        _, best_loss, _ = anneal_gains(
            fine_plant, cmds, gt, self.BOUNDS, AnnealConfig(steps=2000, seed=1)
        )
        # the true gains achieve zero loss; the search should get close
        assert best_loss < 0.05

    def test_multiple_trajectories_mean(self):
        cmds1, gt1 = self.make_problem(t_steps=40)
        cmds2 = step_commands(40, lo=0.05, hi=0.2)
        gt2 = fine_plant(PDGains(8000.0, 600.0), cmds2)
        gains, loss, _ = anneal_gains(
            fine_plant,
            [cmds1, cmds2],
            [gt1, gt2],
            self.BOUNDS,
            AnnealConfig(steps=400, seed=5),
        )
        per_traj = np.mean(
            [
                trajectory_loss(gt1, fine_plant(gains, cmds1)),
                trajectory_loss(gt2, fine_plant(gains, cmds2)),
            ]
        )
        assert loss == pytest.approx(per_traj, abs=1e-12)

    def test_initial_failure_raises(self):
        def broken_plant(gains, cmds):
            raise NumericalInstability("boom")

        cmds, gt = self.make_problem()
        with pytest.raises(OptimizationFailed):
            anneal_gains(broken_plant, cmds, gt, self.BOUNDS, AnnealConfig(steps=10))

    def test_all_proposals_failing_raises(self):
        midpoint = self.BOUNDS.midpoint()

        def fragile_plant(gains, cmds):
            if gains != midpoint:
                raise NumericalInstability("only the midpoint simulates")
            return reference_plant(gains, cmds)

        cmds, gt = self.make_problem()
        with pytest.raises(OptimizationFailed):
            anneal_gains(fragile_plant, cmds, gt, self.BOUNDS, AnnealConfig(steps=50))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AnnealConfig(steps=0)
        with pytest.raises(ValueError):
            AnnealConfig(cooling=1.0)
