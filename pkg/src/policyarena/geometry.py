"""Scene geometry recovery: unprojection, orbit views, rigid registration,
and the composite render-calibration loss.

Pixels are lifted to world points through a pinhole camera
(P_world = R^T D K^-1 [u, v, 1]^T - t), synthetic orbit views are laid out
on a sphere around a reference point, 3D-3D correspondences are registered
with the SVD (Kabsch) closed form, and camera poses are fitted by
gradient-free search over a rendering interface using a weighted
rgb + feature + flow loss.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateBox,
    InsufficientCorrespondences,
    InsufficientOverlap,
)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # 3x3 world-to-camera
    translation: np.ndarray  # length 3

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        r = self.rotation
        if r.shape != (3, 3) or np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        if self.translation.shape != (3,):
            raise ValueError("translation must have length 3")

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        r = self.rotation
        if r.shape != (3, 3) or np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise ValueError("rotation must be orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation must have determinant +1")

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class ViewPose:
    position: np.ndarray
    target: np.ndarray
    elevation: float
    azimuth: float
    radius: float


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    rmsd: float
    degenerate: bool = False


def unproject(pixel: Sequence[float], depth: float, camera: CameraModel) -> np.ndarray:
    """World point for pixel (u, v) at the given depth."""
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    ray = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    return camera.rotation.T @ (depth * ray) - camera.translation


def project(point: np.ndarray, camera: CameraModel) -> tuple[tuple[float, float], float]:
    """Forward pinhole map; returns ((u, v), depth). Inverse of unproject."""
    cam = camera.rotation @ (np.asarray(point, dtype=float) + camera.translation)
    depth = float(cam[2])
    if depth <= 0:
        raise ValueError("point projects behind the camera")
    u = camera.fx * cam[0] / depth + camera.cx
    v = camera.fy * cam[1] / depth + camera.cy
    return (float(u), float(v)), depth


def depth_scale_factor(
    relative_depth: np.ndarray,
    reference_depth: np.ndarray,
    region_mask: np.ndarray,
    min_pixels: int = 10,
) -> float:
    """Median of per-pixel reference/relative ratios over the masked region."""
    rel = np.asarray(relative_depth, dtype=float)
    ref = np.asarray(reference_depth, dtype=float)
    mask = np.asarray(region_mask, dtype=bool)
    if rel.shape != ref.shape or rel.shape != mask.shape:
        raise ValueError("depth maps and mask must share dimensions")
    valid = mask & (rel > 0) & (ref > 0) & np.isfinite(rel) & np.isfinite(ref)
    if int(valid.sum()) < min_pixels:
        raise InsufficientOverlap(
            f"only {int(valid.sum())} valid pixels in region, need {min_pixels}"
        )
    return float(np.median(ref[valid] / rel[valid]))


def orbit_view_poses(
    p_ref: Sequence[float],
    d: float,
    z_levels: Sequence[float],
    theta_values: Sequence[float],
) -> list[ViewPose]:
    """Camera positions p_i = p_ref + d * v_i on a sphere of radius d, sweeping
    azimuth fastest then elevation, each aimed at p_ref."""
    if d <= 0:
        raise ValueError("radius must be positive")
    if len(z_levels) == 0 or len(theta_values) == 0:
        raise ValueError("z_levels and theta_values must be non-empty")
    p_ref = np.asarray(p_ref, dtype=float)
    n_theta = len(theta_values)
    poses = []
    for i in range(len(z_levels) * n_theta):
        theta = float(theta_values[i % n_theta])
        z = float(z_levels[i // n_theta])
        v = np.array([math.cos(theta), math.sin(theta), z])
        v /= math.sqrt(math.cos(theta) ** 2 + math.sin(theta) ** 2 + z * z)
        poses.append(
            ViewPose(
                position=p_ref + d * v,
                target=p_ref.copy(),
                elevation=z,
                azimuth=theta,
                radius=d,
            )
        )
    return poses


def look_at_rotation(position: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera rotation with +z viewing from position toward target."""
    forward = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("position and target coincide")
    forward /= norm
    up = np.asarray(up, dtype=float)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def select_optimal_view(match_counts: Sequence[int]) -> int:
    """Index with the most keypoint matches; ties go to the lowest index."""
    if len(match_counts) == 0:
        raise ValueError("match_counts must be non-empty")
    counts = list(match_counts)
    return counts.index(max(counts))


def _depth_at(depth_map: np.ndarray, u: float, v: float) -> Optional[float]:
    h, w = depth_map.shape[:2]
    col, row = int(round(u)), int(round(v))
    if not (0 <= col < w and 0 <= row < h):
        return None
    d = float(depth_map[row, col])
    if not math.isfinite(d) or d <= 0:
        return None
    return d


def lift_correspondences(
    keypoint_pairs: Sequence[tuple[Sequence[float], Sequence[float]]],
    sim_camera: CameraModel,
    sim_depth: np.ndarray,
    real_camera: CameraModel,
    real_depth: np.ndarray,
) -> np.ndarray:
    """Unproject matched (sim, real) 2D keypoints into paired 3D points.

    Pairs with out-of-image keypoints or invalid depth are dropped; fewer than
    three survivors raise InsufficientCorrespondences. Returns an (M, 2, 3)
    array of (P_sim, P_orig) pairs.
    """
    pairs = []
    for k_sim, k_real in keypoint_pairs:
        d_sim = _depth_at(np.asarray(sim_depth), k_sim[0], k_sim[1])
        d_real = _depth_at(np.asarray(real_depth), k_real[0], k_real[1])
        if d_sim is None or d_real is None:
            continue
        pairs.append(
            (unproject(k_sim, d_sim, sim_camera), unproject(k_real, d_real, real_camera))
        )
    if len(pairs) < 3:
        raise InsufficientCorrespondences(
            f"only {len(pairs)} usable correspondences, need >= 3"
        )
    return np.asarray(pairs)


def estimate_rigid_transform(correspondences: np.ndarray) -> RegistrationResult:
    """Least-squares (R, t) with P_orig ~= R P_sim + t via SVD (Kabsch).

    correspondences: (M, 2, 3) array of (P_sim, P_orig) pairs, M >= 3.
    A reflection solution is corrected by flipping the smallest-singular-value
    axis; collinear inputs yield a best-effort transform with degenerate=True.
    """
    corr = np.asarray(correspondences, dtype=float)
    if corr.ndim != 3 or corr.shape[1:] != (2, 3) or corr.shape[0] < 3:
        raise InsufficientCorrespondences(
            f"need an (M>=3, 2, 3) correspondence array, got shape {corr.shape}"
        )
    src = corr[:, 0, :]
    dst = corr[:, 1, :]
    src_c = src - src.mean(axis=0)
    dst_c = dst - dst.mean(axis=0)
    h = src_c.T @ dst_c
    u, s, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    d = np.diag([1.0, 1.0, sign if sign != 0 else 1.0])
    r = vt.T @ d @ u.T
    t = dst.mean(axis=0) - r @ src.mean(axis=0)
    residuals = dst - (src @ r.T + t)
    rmsd = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
    # rank < 2 (collinear points) leaves rotation about the line unconstrained
    degenerate = bool(np.sum(s > 1e-12 * max(s[0], 1e-300)) < 2)
    return RegistrationResult(
        transform=RigidTransform(rotation=r, translation=t),
        rmsd=rmsd,
        degenerate=degenerate,
    )


def align_scale(
    mesh_bbox: tuple[Sequence[float], Sequence[float]],
    cloud_bbox: tuple[Sequence[float], Sequence[float]],
) -> float:
    """Uniform scale making the mesh bbox diagonal match the point cloud's."""
    mesh_diag = np.linalg.norm(np.subtract(mesh_bbox[1], mesh_bbox[0]))
    cloud_diag = np.linalg.norm(np.subtract(cloud_bbox[1], cloud_bbox[0]))
    if mesh_diag == 0 or cloud_diag == 0:
        raise DegenerateBox("bounding box has zero diagonal")
    return float(cloud_diag / mesh_diag)


# ---------------------------------------------------------------------------
# Composite calibration loss and gradient-free SE(3) pose fitting.

@dataclass(frozen=True)
class CalibrationLossWeights:
    rgb: float = 1.0
    feat: float = 1.0
    flow: float = 1.0

    def __post_init__(self):
        if self.rgb < 0 or self.feat < 0 or self.flow < 0:
            raise ValueError("weights must be non-negative")
        if self.rgb == 0 and self.feat == 0 and self.flow == 0:
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class FrameChannels:
    """One frame's image, feature map, and (except for the final frame)
    forward optical flow."""

    image: np.ndarray
    features: np.ndarray
    flow: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CalibrationObservation:
    """One frame's observed vs rendered channels. Flow is only defined
    between consecutive frames, so the final frame carries flow=None."""

    observed_image: np.ndarray
    rendered_image: np.ndarray
    observed_features: np.ndarray
    rendered_features: np.ndarray
    observed_flow: Optional[np.ndarray] = None
    rendered_flow: Optional[np.ndarray] = None

    @staticmethod
    def pair(observed: FrameChannels, rendered: FrameChannels) -> "CalibrationObservation":
        return CalibrationObservation(
            observed_image=observed.image,
            rendered_image=rendered.image,
            observed_features=observed.features,
            rendered_features=rendered.features,
            observed_flow=observed.flow,
            rendered_flow=rendered.flow,
        )


def _squared_error(a: np.ndarray, b: np.ndarray, per_pixel_mean: bool) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    sq = float(np.sum((a - b) ** 2))
    return sq / a.size if per_pixel_mean else sq


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"feature shape mismatch: {a.shape} vs {b.shape}")
    if np.array_equal(a, b):
        return 0.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0 if na == nb else 1.0
    return max(0.0, float(1.0 - np.dot(a, b) / (na * nb)))


def calibration_loss(
    observations: Sequence[CalibrationObservation],
    weights: CalibrationLossWeights = CalibrationLossWeights(),
    per_pixel_mean: bool = True,
) -> tuple[float, dict[str, float]]:
    """Weighted sum of per-frame rgb, feature-cosine, and flow terms."""
    if not observations:
        raise ValueError("need at least one observation frame")
    rgb = sum(
        _squared_error(o.rendered_image, o.observed_image, per_pixel_mean)
        for o in observations
    )
    feat = sum(
        _cosine_distance(o.rendered_features, o.observed_features) for o in observations
    )
    flow = 0.0
    for o in observations:
        if o.observed_flow is None or o.rendered_flow is None:
            continue
        flow += _squared_error(o.rendered_flow, o.observed_flow, per_pixel_mean)
    breakdown = {
        "rgb": weights.rgb * rgb,
        "feat": weights.feat * feat,
        "flow": weights.flow * flow,
    }
    return sum(breakdown.values()), breakdown


def _axis_angle_to_matrix(axis_angle: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(axis_angle))
    if angle < 1e-12:
        return np.eye(3)
    axis = axis_angle / angle
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    # polar decomposition keeps the nearest rotation after float drift
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


RendererFn = Callable[[RigidTransform], Sequence[FrameChannels]]


def fit_camera_pose(
    renderer: RendererFn,
    observations: Sequence[FrameChannels],
    initial_poses: Sequence[RigidTransform],
    weights: CalibrationLossWeights = CalibrationLossWeights(),
    budget: int = 200,
    seed: int = 0,
    translation_sigma: float = 0.02,
    rotation_sigma: float = math.radians(2.0),
    cooling: float = 0.99,
) -> tuple[RigidTransform, float]:
    """Pick the best initial pose, then refine with seeded Gaussian local
    search over translation + axis-angle with geometric proposal cooling.
    The returned loss never exceeds the best initial pose's loss."""
    if not initial_poses:
        raise ValueError("need at least one initial pose")

    def evaluate(pose: RigidTransform) -> float:
        rendered = renderer(pose)
        if len(rendered) != len(observations):
            raise ValueError(
                f"renderer produced {len(rendered)} frames for "
                f"{len(observations)} observations"
            )
        paired = [
            CalibrationObservation.pair(obs, ren)
            for obs, ren in zip(observations, rendered)
        ]
        total, _ = calibration_loss(paired, weights)
        return total

    best_pose, best_loss = None, math.inf
    for pose in initial_poses:
        loss = evaluate(pose)
        if loss < best_loss:
            best_pose, best_loss = pose, loss

    rng = np.random.default_rng(seed)
    t_sigma, r_sigma = translation_sigma, rotation_sigma
    for _ in range(budget):
        delta_t = rng.normal(0.0, t_sigma, size=3)
        delta_r = _axis_angle_to_matrix(rng.normal(0.0, r_sigma, size=3))
        candidate = RigidTransform(
            rotation=_orthonormalize(delta_r @ best_pose.rotation),
            translation=best_pose.translation + delta_t,
        )
        loss = evaluate(candidate)
        if loss < best_loss:
            best_pose, best_loss = candidate, loss
        t_sigma *= cooling
        r_sigma *= cooling
    return best_pose, best_loss


# ---------------------------------------------------------------------------
# File formats: binary depth maps, camera JSON, correspondence JSONL.

DEPTH_HEADER = struct.Struct("<II")


def save_depth_map(values: np.ndarray, path) -> None:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("depth map must be 2-D")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_HEADER.pack(w, h))
        fh.write(arr.tobytes())


def load_depth_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = DEPTH_HEADER.unpack(fh.read(DEPTH_HEADER.size))
        data = np.frombuffer(fh.read(), dtype=np.float32)
    if data.size != w * h:
        raise ValueError(f"depth payload has {data.size} values, expected {w * h}")
    return data.reshape(h, w)


def camera_to_json(camera: CameraModel) -> dict:
    return {
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "R": [float(x) for x in camera.rotation.ravel()],
        "t": [float(x) for x in camera.translation],
    }


def camera_from_json(obj: dict) -> CameraModel:
    return CameraModel(
        fx=float(obj["fx"]),
        fy=float(obj["fy"]),
        cx=float(obj["cx"]),
        cy=float(obj["cy"]),
        rotation=np.asarray(obj["R"], dtype=float).reshape(3, 3),
        translation=np.asarray(obj["t"], dtype=float),
    )


def save_correspondences(correspondences: np.ndarray, path) -> None:
    corr = np.asarray(correspondences, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        for pair in corr:
            fh.write(json.dumps({"sim": list(pair[0]), "orig": list(pair[1])}) + "\n")


def load_correspondences(path) -> np.ndarray:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            pairs.append((obj["sim"], obj["orig"]))
    return np.asarray(pairs, dtype=float)
