"""Camera geometry for rebuilding a scene from one video.

Unproject pixels into world points, place orbit cameras around an object,
register two point clouds with the SVD closed form, and refine a camera pose
against rendered observations.
"""

import math

import numpy as np

from policyarena.geometry import (
    CameraModel,
    CalibrationObservation,
    FrameChannels,
    RigidTransform,
    calibration_loss,
    estimate_rigid_transform,
    fit_camera_pose,
    orbit_view_poses,
    project,
    unproject,
)

# --- pinhole round trip ---------------------------------------------------
camera = CameraModel(fx=500.0, fy=500.0, cx=320.0, cy=240.0,
                     rotation=np.eye(3), translation=np.zeros(3))
point = unproject((400.0, 200.0), depth=2.5, camera=camera)
(u, v), depth = project(point, camera)
print(f"pixel (400, 200) at depth 2.5 -> world {np.round(point, 3)} -> back to "
      f"({u:.1f}, {v:.1f}) at {depth:.2f}")

# --- orbit views ------------------------------------------------------------
poses = orbit_view_poses(
    p_ref=[0.0, 0.0, 0.5], d=1.2,
    z_levels=[0.0, 0.5], theta_values=np.linspace(0, 2 * math.pi, 6, endpoint=False),
)
radii = {round(float(np.linalg.norm(p.position - [0, 0, 0.5])), 9) for p in poses}
print(f"{len(poses)} orbit cameras, all at radius {radii}")

# --- rigid registration (Kabsch) -------------------------------------------
rng = np.random.default_rng(1)
cloud = rng.normal(size=(30, 3))
angle = math.radians(25.0)
true_rot = np.array(
    [[math.cos(angle), -math.sin(angle), 0.0],
     [math.sin(angle), math.cos(angle), 0.0],
     [0.0, 0.0, 1.0]]
)
true_t = np.array([0.3, -0.1, 0.8])
moved = cloud @ true_rot.T + true_t
result = estimate_rigid_transform(np.stack([cloud, moved], axis=1))
print(f"registration RMSD {result.rmsd:.2e}, "
      f"translation error {np.linalg.norm(result.transform.translation - true_t):.2e}")


# --- pose refinement against a renderer -------------------------------------
# A toy differentiable-free "renderer": the image is the transformed cloud,
# the features are its projected pixel coordinates.
class CloudRenderer:
    def __init__(self):
        self.points = rng.uniform(-0.6, 0.6, size=(20, 3)) + np.array([0, 0, 1.5])
        self.camera = CameraModel(fx=30.0, fy=30.0, cx=16.0, cy=16.0,
                                  rotation=np.eye(3), translation=np.zeros(3))

    def __call__(self, pose):
        moved = self.points @ pose.rotation.T + pose.translation
        feats = []
        for p in moved:
            (u, v), d = project(p, self.camera)
            feats.extend([u, v, d])
        return [FrameChannels(image=moved, features=np.asarray(feats))]


renderer = CloudRenderer()
truth = RigidTransform(true_rot, np.array([0.03, -0.02, 0.0]))
observed = renderer(truth)

grid = [RigidTransform.identity(),
        RigidTransform(true_rot, np.zeros(3))]  # a coarse pose grid
pose, loss = fit_camera_pose(renderer, observed, grid, budget=600, seed=0, cooling=0.996)
print(f"refined pose loss {loss:.2e}, "
      f"translation error {np.linalg.norm(pose.translation - truth.translation):.4f}")

# The loss itself combines photometric, feature, and flow disagreement.
total, parts = calibration_loss(
    [CalibrationObservation.pair(o, r) for o, r in zip(observed, renderer(pose))]
)
print(f"loss breakdown: {parts}")
