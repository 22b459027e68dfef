"""Synthetic analytic scenes, pinhole cameras, and the oracle renderer.

Scenes are unions of constant-density solids (sphere / box / slab).  The
ground-truth renderer composites the analytic densities at high resolution
and serves as both the training target and the PSNR reference.  Scaling a
scene by k multiplies every position, extent and near/far by k and divides
every primitive density by 1/k, which leaves renders unchanged (alpha
invariance by construction).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .errors import DomainError, SceneValidationError
from .fields import Bounds
from .volrend import Ray, RenderOutput, composite, composite_batch

_AXES = {"x": 0, "y": 1, "z": 2}


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    sigma: float
    albedo: np.ndarray

    def contains(self, pts):
        q = pts - self.center
        d2 = np.einsum("...i,...i->...", q, q)
        return d2 <= self.radius * self.radius

    def scaled(self, k):
        return replace(self, center=self.center * k, radius=self.radius * k,
                       sigma=self.sigma / k)


@dataclass(frozen=True)
class BoxPrim:
    lo: np.ndarray
    hi: np.ndarray
    sigma: float
    albedo: np.ndarray

    def contains(self, pts):
        mask = (pts[..., 0] >= self.lo[0]) & (pts[..., 0] <= self.hi[0])
        for ax in (1, 2):
            mask &= (pts[..., ax] >= self.lo[ax]) & (pts[..., ax] <= self.hi[ax])
        return mask

    def scaled(self, k):
        return replace(self, lo=self.lo * k, hi=self.hi * k, sigma=self.sigma / k)


@dataclass(frozen=True)
class Slab:
    """Infinite layer between two planes perpendicular to one axis."""

    axis: int
    lo: float
    hi: float
    sigma: float
    albedo: np.ndarray

    def contains(self, pts):
        c = pts[..., self.axis]
        return (c >= self.lo) & (c <= self.hi)

    def scaled(self, k):
        return replace(self, lo=self.lo * k, hi=self.hi * k, sigma=self.sigma / k)


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraSpec:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_y_deg: float
    width: int
    height: int

    def scaled(self, k):
        return replace(self, position=self.position * k, look_at=self.look_at * k)


def camera_rays(cam: CameraSpec):
    """Pixel-center rays: origins (H*W, 3) and unit directions (H*W, 3).

    Row-major pixel order: index = row * width + col, row 0 at the top.
    """
    forward = cam.look_at - cam.position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, cam.up)
    nrm = np.linalg.norm(right)
    if nrm < 1e-12:
        raise DomainError("camera up vector is parallel to the view direction")
    right /= nrm
    true_up = np.cross(right, forward)

    tan_half = np.tan(np.deg2rad(cam.fov_y_deg) / 2.0)
    aspect = cam.width / cam.height
    cols = (np.arange(cam.width) + 0.5) / cam.width * 2.0 - 1.0
    rows = 1.0 - (np.arange(cam.height) + 0.5) / cam.height * 2.0
    u, v = np.meshgrid(cols * tan_half * aspect, rows * tan_half)
    dirs = (u[..., None] * right + v[..., None] * true_up + forward).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(cam.position, dirs.shape).copy()
    return origins, dirs


# ---------------------------------------------------------------------------
# scene spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    name: str
    primitives: tuple
    bounds: Bounds
    cameras: tuple
    near: float
    far: float
    scale_k: float = 1.0
    sampler: "object" = None  # SamplerSpec; typed loosely to avoid an import cycle

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise DomainError("need far > near > 0")
        if not self.primitives:
            raise DomainError("scene needs at least one primitive")
        if not self.cameras:
            raise DomainError("scene needs at least one camera")

    @property
    def ray_length(self) -> float:
        """The reference length L: every ray spans [near, far]."""
        return self.far - self.near


def evaluate_density(scene: SceneSpec, pts):
    """Analytic sigma (M,) and density-weighted albedo (M, 3) at points."""
    pts = np.asarray(pts, dtype=np.float64)
    sig = np.zeros(pts.shape[:-1])
    col = np.zeros(pts.shape[:-1] + (3,))
    for prim in scene.primitives:
        mask = prim.contains(pts)
        sig += prim.sigma * mask
        col += (prim.sigma * prim.albedo) * mask[..., None]
    # density-weighted albedo; empty samples stay black
    inv = np.divide(1.0, sig, out=np.zeros_like(sig), where=sig > 0)
    albedo = col * inv[..., None]
    return sig, albedo


def ground_truth_render_batch(scene: SceneSpec, origins, dirs, resolution: int = 1024,
                              chunk: int = 1024):
    """Oracle render of a batch of rays over [near, far], uniform midpoints."""
    if resolution < 1024:
        raise DomainError("oracle resolution must be >= 1024")
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    d = (scene.far - scene.near) / resolution
    t_mids = scene.near + (np.arange(resolution) + 0.5) * d

    colors = np.empty((n, 3))
    depth = np.empty(n)
    final_t = np.empty(n)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        pts = t_mids[None, :, None] * dirs[sl, None, :]
        pts += origins[sl, None, :]
        sig, alb = evaluate_density(scene, pts)
        # alpha = 1 - exp(-sigma d), computed in place in the sigma buffer
        np.multiply(sig, -d, out=sig)
        np.expm1(sig, out=sig)
        np.negative(sig, out=sig)
        out = composite_batch(sig, alb, np.broadcast_to(t_mids, sig.shape), validate=False)
        colors[sl] = out["color"]
        depth[sl] = out["depth"]
        final_t[sl] = out["final_transmittance"]
    return {"color": colors, "depth": depth, "final_transmittance": final_t}


def ground_truth_render(scene: SceneSpec, ray: Ray, resolution: int = 1024) -> RenderOutput:
    """Single-ray oracle render, returning the full compositing record."""
    if resolution < 1024:
        raise DomainError("oracle resolution must be >= 1024")
    d = ray.length / resolution
    t_mids = ray.t_near + (np.arange(resolution) + 0.5) * d
    sig, alb = evaluate_density(scene, ray.at(t_mids))
    alphas = -np.expm1(-sig * d)
    return composite(alphas, alb, t_mids)


def render_scene_image(scene: SceneSpec, camera_index: int = 0, resolution: int = 1024):
    """Oracle image for one camera as an (H, W, 3) array in [0, 1]."""
    cam = scene.cameras[camera_index]
    origins, dirs = camera_rays(cam)
    out = ground_truth_render_batch(scene, origins, dirs, resolution)
    return out["color"].reshape(cam.height, cam.width, 3)


def scale_scene(scene: SceneSpec, k: float) -> SceneSpec:
    """Rescale every distance by k and every density by 1/k."""
    if not (np.isfinite(k) and k > 0):
        raise DomainError("scale factor k must be finite and > 0")
    return replace(
        scene,
        primitives=tuple(p.scaled(k) for p in scene.primitives),
        bounds=scene.bounds.scaled(k),
        cameras=tuple(c.scaled(k) for c in scene.cameras),
        near=scene.near * k,
        far=scene.far * k,
        scale_k=scene.scale_k * k,
    )


# ---------------------------------------------------------------------------
# JSON schema
# ---------------------------------------------------------------------------

def _need(doc, key, typ, path):
    if key not in doc:
        raise SceneValidationError(f"{path}.{key}", "missing required key")
    val = doc[key]
    if typ is float and isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if typ is int and isinstance(val, int) and not isinstance(val, bool):
        return val
    if isinstance(val, typ) and not (typ is not bool and isinstance(val, bool)):
        return val
    raise SceneValidationError(f"{path}.{key}", f"expected {typ.__name__}, got {type(val).__name__}")


def _vec3_of(doc, key, path):
    v = _need(doc, key, list, path)
    if len(v) != 3 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise SceneValidationError(f"{path}.{key}", "expected a list of 3 numbers")
    return np.array(v, dtype=np.float64)


def _parse_primitive(doc, path):
    shape = _need(doc, "shape", str, path)
    sigma = _need(doc, "sigma", float, path)
    if sigma <= 0:
        raise SceneValidationError(f"{path}.sigma", "must be > 0")
    albedo = _vec3_of(doc, "albedo", path)
    if np.any(albedo < 0) or np.any(albedo > 1):
        raise SceneValidationError(f"{path}.albedo", "components must lie in [0, 1]")
    if shape == "sphere":
        radius = _need(doc, "radius", float, path)
        if radius <= 0:
            raise SceneValidationError(f"{path}.radius", "must be > 0")
        return Sphere(_vec3_of(doc, "center", path), radius, sigma, albedo)
    if shape == "box":
        lo, hi = _vec3_of(doc, "min", path), _vec3_of(doc, "max", path)
        if np.any(hi <= lo):
            raise SceneValidationError(f"{path}.max", "must exceed min on every axis")
        return BoxPrim(lo, hi, sigma, albedo)
    if shape == "slab":
        axis = _need(doc, "axis", str, path)
        if axis not in _AXES:
            raise SceneValidationError(f"{path}.axis", "must be one of x, y, z")
        lo, hi = _need(doc, "min", float, path), _need(doc, "max", float, path)
        if hi <= lo:
            raise SceneValidationError(f"{path}.max", "must exceed min")
        return Slab(_AXES[axis], lo, hi, sigma, albedo)
    raise SceneValidationError(f"{path}.shape", f"unknown shape {shape!r}")


def _parse_camera(doc, path):
    width = _need(doc, "width", int, path)
    height = _need(doc, "height", int, path)
    if width < 1 or height < 1:
        raise SceneValidationError(f"{path}.width", "image dimensions must be >= 1")
    fov = _need(doc, "fov_y_deg", float, path)
    if not (0 < fov < 180):
        raise SceneValidationError(f"{path}.fov_y_deg", "must lie in (0, 180)")
    return CameraSpec(
        position=_vec3_of(doc, "position", path),
        look_at=_vec3_of(doc, "look_at", path),
        up=_vec3_of(doc, "up", path),
        fov_y_deg=fov, width=width, height=height,
    )


def scene_from_dict(doc: dict, name: str = "scene") -> SceneSpec:
    """Validate and build a SceneSpec; errors carry the offending path."""
    from .sampling import SamplerSpec  # deferred: sampling imports volrend only

    if not isinstance(doc, dict):
        raise SceneValidationError("$", "scene document must be a JSON object")
    prims_doc = _need(doc, "primitives", list, "$")
    if not prims_doc:
        raise SceneValidationError("$.primitives", "must not be empty")
    prims = tuple(
        _parse_primitive(p, f"$.primitives[{i}]") for i, p in enumerate(prims_doc)
    )
    cams_doc = _need(doc, "cameras", list, "$")
    if not cams_doc:
        raise SceneValidationError("$.cameras", "must not be empty")
    cams = tuple(_parse_camera(c, f"$.cameras[{i}]") for i, c in enumerate(cams_doc))

    near = _need(doc, "near", float, "$")
    far = _need(doc, "far", float, "$")
    if not (0 < near < far):
        raise SceneValidationError("$.near", "need 0 < near < far")

    bounds_doc = _need(doc, "bounds", dict, "$")
    lo, hi = _vec3_of(bounds_doc, "min", "$.bounds"), _vec3_of(bounds_doc, "max", "$.bounds")
    if np.any(hi <= lo):
        raise SceneValidationError("$.bounds.max", "must exceed min on every axis")

    scale_k = float(doc.get("scale_k", 1.0))
    if scale_k <= 0:
        raise SceneValidationError("$.scale_k", "must be > 0")

    sampler = SamplerSpec.from_dict(doc["sampler"], "$.sampler") if "sampler" in doc \
        else SamplerSpec.default()
    if sampler.kind.value == "disparity" and near <= 0:
        raise SceneValidationError("$.sampler.kind", "disparity sampling requires near > 0")

    scene = SceneSpec(
        name=str(doc.get("name", name)),
        primitives=prims,
        bounds=Bounds(lo, hi),
        cameras=cams,
        near=near,
        far=far,
        scale_k=1.0,
        sampler=sampler,
    )
    if scale_k != 1.0:
        scene = scale_scene(scene, scale_k)
    return scene


def load_scene(path_or_name) -> SceneSpec:
    """Load a scene JSON file, or a bundled scene by bare name."""
    name = str(path_or_name)
    if name in bundled_scene_names() and not name.endswith(".json"):
        return bundled_scene(name)
    with open(name) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SceneValidationError("$", f"invalid JSON: {e}") from e
    return scene_from_dict(doc, name=name)


def bundled_scene_names():
    return ("slab", "sphere", "shells", "boxes")


def bundled_scene(name: str) -> SceneSpec:
    if name not in bundled_scene_names():
        raise DomainError(f"no bundled scene named {name!r}; have {bundled_scene_names()}")
    ref = resources.files("alphainv").joinpath(f"scenes_data/{name}.json")
    return scene_from_dict(json.loads(ref.read_text()), name=name)
