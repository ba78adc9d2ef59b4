"""Generate controlled scene perturbations.

Three knobs: blend background pixels toward a red/blue channel swap, permute
which object sits where, and swap the backdrop — each deterministic so an
execution under a perturbation is reproducible.
"""

import numpy as np

from policyarena.perturb import AssetState, SceneManifest, color_swap, pose_permutations, swap_background

# --- color: C'(alpha) interpolates [R,G,B] -> [B,G,R] per pixel ----------
pixel = np.array([[[255, 0, 0]]], dtype=np.uint8)  # pure red
for alpha in (0.0, 0.33, 1.0):
    r, g, b = color_swap(pixel, alpha=alpha)[0, 0]
    print(f"alpha={alpha:<4} red pixel -> ({r}, {g}, {b})")

# A mask confines the swap to background pixels (value >= 128).
image = np.zeros((2, 2, 3), dtype=np.uint8)
image[..., 0] = 200  # reddish everywhere
mask = np.array([[255, 0], [0, 255]], dtype=np.uint8)
swapped = color_swap(image, mask, alpha=1.0)
print(f"masked swap touched {int((swapped != image).any(axis=2).sum())} of 4 pixels")

# --- poses: N variants, identity first, same positions redistributed -----
scene = SceneManifest(
    scene_id="tabletop",
    assets=tuple(
        AssetState(
            asset_id=name,
            mesh_ref=f"{name}.glb",
            position=(float(k), 0.0, 0.02),
            orientation=(1.0, 0.0, 0.0, 0.0),
        )
        for k, name in enumerate(["cup", "tray", "sponge"])
    ),
    background_ref="wood-table",
    task="stack the cup on the tray",
)

for k, variant in enumerate(pose_permutations(scene, seed=3)):
    layout = {a.asset_id: a.position[0] for a in variant.assets}
    print(f"pose variant {k}: {layout}" + ("  <- identity" if variant == scene else ""))

# --- background: swap the backdrop against a fixed catalog ----------------
catalog = ["wood-table", "marble-counter", "steel-bench"]
relit = swap_background(scene, "marble-counter", catalog)
print(f"background {scene.background_ref} -> {relit.background_ref}; "
      f"assets untouched: {relit.assets == scene.assets}")
