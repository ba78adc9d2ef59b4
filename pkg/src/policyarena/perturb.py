"""Controlled scene perturbations: background swap, color shift, pose shuffle.

Scenes are perturbed one axis at a time so robustness can be attributed:
swap the background reference, blend background pixels toward their BGR
remap at a chosen intensity, or permute object positions while leaving every
other property untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import NotInCatalog

DEFAULT_ALPHAS = (0.0, 0.33, 0.66, 1.0)
MASK_THRESHOLD = 128  # mask >= 128 marks a background pixel eligible for the swap


@dataclass(frozen=True)
class AssetState:
    asset_id: str
    mesh_ref: str
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # unit quaternion (w, x, y, z)
    scale: float = 1.0
    mass: float = 1.0
    friction: float = 0.5
    surface_type: str = "Plastic"

    def __post_init__(self):
        q = np.asarray(self.orientation, dtype=float)
        if abs(float(np.linalg.norm(q)) - 1.0) > 1e-9:
            raise ValueError(f"quaternion must be unit norm: {self.orientation}")
        if self.scale <= 0 or self.mass <= 0:
            raise ValueError("scale and mass must be positive")
        if self.friction < 0:
            raise ValueError("friction must be non-negative")


@dataclass(frozen=True)
class SceneManifest:
    scene_id: str
    assets: tuple[AssetState, ...]
    background_ref: str
    task: str = ""
    camera: Optional[dict] = None

    def __post_init__(self):
        ids = [a.asset_id for a in self.assets]
        if len(ids) != len(set(ids)):
            raise ValueError("asset ids must be unique")


def color_swap(
    image: np.ndarray,
    mask: Optional[np.ndarray] = None,
    alpha: float = 1.0,
) -> np.ndarray:
    """Blend eligible pixels toward their BGR remap:
    C' = (1 - alpha) [R, G, B] + alpha [B, G, R]; G is untouched by construction.

    image: (H, W, 3) or (H, W, 4) uint8; an alpha plane passes through.
    mask: optional (H, W) uint8; values >= 128 select pixels to perturb.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] not in (3, 4):
        raise ValueError(f"expected (H, W, 3|4) image, got shape {image.shape}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != image.shape[:2]:
            raise ValueError(
                f"mask shape {mask.shape} does not match image {image.shape[:2]}"
            )
    if alpha == 0.0:
        return image.copy()

    rgb = image[:, :, :3].astype(np.float64)
    blended = (1.0 - alpha) * rgb + alpha * rgb[:, :, ::-1]
    # round half away from zero (values are non-negative), then clamp
    quantized = np.clip(np.floor(blended + 0.5), 0, 255).astype(image.dtype)

    out = image.copy()
    if mask is None:
        out[:, :, :3] = quantized
    else:
        sel = mask >= MASK_THRESHOLD
        out[:, :, :3][sel] = quantized[sel]
    return out


def _apply_permutation(scene: SceneManifest, perm: Sequence[int]) -> SceneManifest:
    positions = [scene.assets[p].position for p in perm]
    assets = tuple(
        replace(asset, position=positions[i]) for i, asset in enumerate(scene.assets)
    )
    return replace(scene, assets=assets)


def pose_permutations(scene: SceneManifest, seed: int) -> list[SceneManifest]:
    """N variants differing only in object arrangement; variant 0 is the
    identity layout, positions are copied (never recomputed)."""
    n = len(scene.assets)
    if n < 1:
        raise ValueError("scene must contain at least one asset")
    variants = [_apply_permutation(scene, list(range(n)))]
    if n == 1:
        return variants
    rng = np.random.default_rng(seed)
    identity = tuple(range(n))
    # sample the non-identity variants without replacement when enough
    # distinct permutations exist, otherwise allow repeats
    distinct_possible = math.factorial(n) - 1 >= n - 1
    seen: set[tuple[int, ...]] = {identity} if distinct_possible else set()
    while len(variants) < n:
        perm = tuple(int(k) for k in rng.permutation(n))
        if perm in seen:
            continue
        if distinct_possible:
            seen.add(perm)
        variants.append(_apply_permutation(scene, perm))
    return variants


def swap_background(
    scene: SceneManifest, background_id: str, catalog: Sequence[str]
) -> SceneManifest:
    if background_id not in catalog:
        raise NotInCatalog(f"background {background_id!r} not in catalog {list(catalog)}")
    return replace(scene, background_ref=background_id)


# ---------------------------------------------------------------------------
# File formats: PNG images/masks, JSON manifests.

def load_image(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("RGB", "RGBA"):
        img = img.convert("RGB")
    return np.asarray(img)


def save_image(array: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"))


def asset_to_json(asset: AssetState) -> dict:
    return {
        "asset_id": asset.asset_id,
        "mesh_ref": asset.mesh_ref,
        "position": list(asset.position),
        "orientation": list(asset.orientation),
        "scale": asset.scale,
        "mass": asset.mass,
        "friction": asset.friction,
        "surface_type": asset.surface_type,
    }


def asset_from_json(obj: dict) -> AssetState:
    return AssetState(
        asset_id=obj["asset_id"],
        mesh_ref=obj["mesh_ref"],
        position=tuple(float(v) for v in obj["position"]),
        orientation=tuple(float(v) for v in obj["orientation"]),
        scale=float(obj.get("scale", 1.0)),
        mass=float(obj.get("mass", 1.0)),
        friction=float(obj.get("friction", 0.5)),
        surface_type=obj.get("surface_type", "Plastic"),
    )


def scene_to_json(scene: SceneManifest) -> dict:
    return {
        "scene_id": scene.scene_id,
        "assets": [asset_to_json(a) for a in scene.assets],
        "background_ref": scene.background_ref,
        "task": scene.task,
        "camera": scene.camera,
    }


def scene_from_json(obj: dict) -> SceneManifest:
    return SceneManifest(
        scene_id=obj["scene_id"],
        assets=tuple(asset_from_json(a) for a in obj["assets"]),
        background_ref=obj["background_ref"],
        task=obj.get("task", ""),
        camera=obj.get("camera"),
    )


def load_scene(path) -> SceneManifest:
    with open(path, encoding="utf-8") as fh:
        return scene_from_json(json.load(fh))


def save_scene(scene: SceneManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_json(scene), fh, indent=2)
        fh.write("\n")
