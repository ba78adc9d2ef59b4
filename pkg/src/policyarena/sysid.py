"""PD controller gain identification by simulated annealing.

The plant is pluggable: anything mapping (gains, command trajectory) to an
end-effector pose trajectory. The loss per timestep is Euclidean position
error plus arcsin(||R_gt - R_sim||_F / (2 sqrt 2)), which equals half the
geodesic angle between the two rotations. A bundled linear double-integrator
plant stands in for the external simulator in tests and demos.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalInstability, OptimizationFailed

KP_BOUNDS = (2000.0, 15000.0)
KD_BOUNDS = (10.0, 2000.0)
TWO_SQRT2 = 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class PDGains:
    kp: float
    kd: float


@dataclass(frozen=True)
class GainBounds:
    kp: tuple[float, float] = KP_BOUNDS
    kd: tuple[float, float] = KD_BOUNDS

    def __post_init__(self):
        if self.kp[0] >= self.kp[1] or self.kd[0] >= self.kd[1]:
            raise ValueError("bounds must be non-degenerate intervals")

    def clip(self, kp: float, kd: float) -> PDGains:
        return PDGains(
            kp=min(self.kp[1], max(self.kp[0], kp)),
            kd=min(self.kd[1], max(self.kd[0], kd)),
        )

    def midpoint(self) -> PDGains:
        return PDGains(kp=0.5 * sum(self.kp), kd=0.5 * sum(self.kd))


@dataclass(frozen=True)
class EePoseTrajectory:
    positions: np.ndarray  # (T, 3)
    orientations: np.ndarray  # (T, 3, 3)

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        object.__setattr__(
            self, "orientations", np.asarray(self.orientations, dtype=float)
        )
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must be (T, 3)")
        if self.orientations.shape != (self.positions.shape[0], 3, 3):
            raise ValueError("orientations must be (T, 3, 3)")

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class AnnealConfig:
    steps: int = 5000
    initial_temperature: Optional[float] = None  # None: self-scale to initial loss
    cooling: float = 0.999
    proposal_sigma: float = 0.05  # fraction of each bound range
    restart_after: int = 1000  # non-improving steps before restarting at best
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 < self.cooling < 1.0:
            raise ValueError("cooling factor must lie in (0, 1)")


PlantFn = Callable[[PDGains, np.ndarray], EePoseTrajectory]


def _check_rotation(r: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise ValueError("input is not orthonormal within tolerance")
    return r


def rotation_distance(ra: np.ndarray, rb: np.ndarray) -> float:
    """arcsin(||Ra - Rb||_F / (2 sqrt 2)): half the geodesic angle, in [0, pi/2]."""
    ra = _check_rotation(ra)
    rb = _check_rotation(rb)
    arg = np.linalg.norm(ra - rb, ord="fro") / TWO_SQRT2
    return math.asin(min(1.0, max(0.0, float(arg))))


def trajectory_loss(gt: EePoseTrajectory, sim: EePoseTrajectory) -> float:
    """Sum over timesteps of position error plus rotation distance."""
    if len(gt) != len(sim):
        raise ValueError(f"trajectory lengths differ: {len(gt)} vs {len(sim)}")
    pos_err = np.linalg.norm(gt.positions - sim.positions, axis=1).sum()
    rot_err = sum(
        rotation_distance(ga, sa) for ga, sa in zip(gt.orientations, sim.orientations)
    )
    return float(pos_err + rot_err)


def reference_plant(
    gains: PDGains, commands: np.ndarray, dt: float = 0.01, mass: float = 1.0
) -> EePoseTrajectory:
    """Per-axis double integrator m x'' = kp (x_cmd - x) - kd x', integrated
    semi-implicitly; orientation held at identity. A desk-scale stand-in for
    the external physics simulator."""
    if dt <= 0 or mass <= 0:
        raise ValueError("dt and mass must be positive")
    commands = np.atleast_2d(np.asarray(commands, dtype=float))
    if commands.shape[1] != 3:
        raise ValueError("commands must be (T, 3)")
    x = commands[0].copy()
    v = np.zeros(3)
    positions = np.empty_like(commands)
    for t, cmd in enumerate(commands):
        accel = (gains.kp * (cmd - x) - gains.kd * v) / mass
        v = v + dt * accel
        x = x + dt * v
        if np.max(np.abs(x)) > 1e6:
            raise NumericalInstability(f"state blew up at step {t}")
        positions[t] = x
    orientations = np.broadcast_to(np.eye(3), (commands.shape[0], 3, 3)).copy()
    return EePoseTrajectory(positions=positions, orientations=orientations)


def _mean_loss(
    plant: PlantFn,
    gains: PDGains,
    commands: Sequence[np.ndarray],
    gt: Sequence[EePoseTrajectory],
) -> float:
    losses = [trajectory_loss(g, plant(gains, c)) for c, g in zip(commands, gt)]
    return float(np.mean(losses))


def anneal_gains(
    plant: PlantFn,
    commands,
    gt,
    bounds: GainBounds = GainBounds(),
    config: AnnealConfig = AnnealConfig(),
) -> tuple[PDGains, float, list[float]]:
    """Simulated annealing over (kp, kd) inside bounds.

    Returns (best gains, best loss, best-so-far loss trace). The trace is
    monotone non-increasing; worsening moves are accepted with probability
    exp(-delta / T_k) under geometric cooling T_k = T0 * gamma^k.
    """
    if isinstance(gt, EePoseTrajectory):
        gt = [gt]
        commands = [commands]
    commands = [np.asarray(c, dtype=float) for c in commands]
    rng = np.random.default_rng(config.seed)
    sigma_kp = config.proposal_sigma * (bounds.kp[1] - bounds.kp[0])
    sigma_kd = config.proposal_sigma * (bounds.kd[1] - bounds.kd[0])

    current = bounds.midpoint()
    try:
        current_loss = _mean_loss(plant, current, commands, gt)
    except Exception as exc:
        raise OptimizationFailed(f"initial candidate failed: {exc}") from exc

    best, best_loss = current, current_loss
    temperature = (
        config.initial_temperature
        if config.initial_temperature is not None
        else max(current_loss, 1e-12)
    )
    trace = [best_loss]
    failures = 0
    since_improvement = 0
    for _ in range(config.steps - 1):
        candidate = bounds.clip(
            current.kp + rng.normal(0.0, sigma_kp),
            current.kd + rng.normal(0.0, sigma_kd),
        )
        try:
            loss = _mean_loss(plant, candidate, commands, gt)
        except Exception:
            failures += 1
            temperature *= config.cooling
            trace.append(best_loss)
            continue
        delta = loss - current_loss
        if delta <= 0 or (
            temperature > 0 and rng.random() < math.exp(-delta / temperature)
        ):
            current, current_loss = candidate, loss
        if loss < best_loss:
            best, best_loss = candidate, loss
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= config.restart_after:
                current, current_loss = best, best_loss
                since_improvement = 0
        temperature *= config.cooling
        trace.append(best_loss)
    if failures == config.steps - 1 and config.steps > 1:
        raise OptimizationFailed("every proposed candidate failed to simulate")
    return best, best_loss, trace
