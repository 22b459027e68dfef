"""Ray samplers (uniform / stratified / disparity / importance) and the
unbounded-background contraction.

Sample counts are fixed properties of the sampler, never of the scene
scale: scaling a scene stretches the same number of intervals.  All
interval lengths are metric (pre-contraction) distances.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SceneValidationError
from .volrend import Ray, RaySamples


class SamplerKind(enum.Enum):
    UNIFORM = "uniform"
    STRATIFIED = "stratified"
    DISPARITY = "disparity"
    IMPORTANCE = "importance"


class Contraction(enum.Enum):
    NONE = "none"
    MIPNERF360 = "mipnerf360"


@dataclass(frozen=True)
class SamplerSpec:
    kind: SamplerKind
    n_samples: int
    n_importance: int = 0
    seed: int = 0
    contraction: Contraction = Contraction.NONE

    def __post_init__(self):
        if self.n_samples < 1:
            raise DomainError("n_samples must be >= 1")
        if self.n_importance < 0:
            raise DomainError("n_importance must be >= 0")

    @classmethod
    def default(cls) -> "SamplerSpec":
        return cls(SamplerKind.STRATIFIED, 64)

    @classmethod
    def from_dict(cls, doc: dict, path: str = "$.sampler") -> "SamplerSpec":
        if not isinstance(doc, dict):
            raise SceneValidationError(path, "must be a JSON object")
        try:
            kind = SamplerKind(str(doc.get("kind", "stratified")).lower())
        except ValueError:
            raise SceneValidationError(
                f"{path}.kind", f"must be one of {[k.value for k in SamplerKind]}")
        try:
            contraction = Contraction(str(doc.get("contraction", "none")).lower())
        except ValueError:
            raise SceneValidationError(
                f"{path}.contraction", f"must be one of {[c.value for c in Contraction]}")
        n_samples = doc.get("n_samples", 64)
        n_importance = doc.get("n_importance", 0)
        seed = doc.get("seed", 0)
        for key, val in (("n_samples", n_samples), ("n_importance", n_importance), ("seed", seed)):
            if not isinstance(val, int) or isinstance(val, bool):
                raise SceneValidationError(f"{path}.{key}", "must be an integer")
        if n_samples < 1:
            raise SceneValidationError(f"{path}.n_samples", "must be >= 1")
        if n_importance < 0:
            raise SceneValidationError(f"{path}.n_importance", "must be >= 0")
        return cls(kind, n_samples, n_importance, seed, contraction)


def contract(p):
    """Mip-NeRF-360 contraction: identity inside the unit ball, else
    (2 - 1/||p||) * p/||p||; the image is the open ball of radius 2."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise DomainError("positions must be finite")
    norm = np.linalg.norm(p, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        mapped = (2.0 - 1.0 / norm) * (p / norm)
    return np.where(norm > 1.0, mapped, p)


def stratified_jitter(seed: int, epoch: int, shape) -> np.ndarray:
    """Counter-based uniforms in [0, 1): reproducible per (seed, epoch)."""
    bit = np.random.Philox(key=np.uint64(seed), counter=[np.uint64(epoch), 0, 0, 0])
    return np.random.Generator(bit).random(shape)


def _midpoint_intervals(t_sorted, t_near, t_far):
    """Intervals from consecutive midpoint gaps with boundary half-gaps.

    Boundaries: t_near, (t_i + t_{i+1})/2 ..., t_far; sums exactly to the
    ray extent.
    """
    mids = 0.5 * (t_sorted[..., :-1] + t_sorted[..., 1:])
    lo = np.full(t_sorted.shape[:-1] + (1,), t_near)
    hi = np.full(t_sorted.shape[:-1] + (1,), t_far)
    edges = np.concatenate([lo, mids, hi], axis=-1)
    return np.diff(edges, axis=-1)


def _uniform_grid(t_near, t_far, n, n_rays=None):
    d = (t_far - t_near) / n
    base = t_near + (np.arange(n) + 0.5) * d
    if n_rays is None:
        return base, np.full(n, d)
    return np.tile(base, (n_rays, 1)), np.full((n_rays, n), d)


def _stratified_grid(t_near, t_far, n, u):
    h = (t_far - t_near) / n
    t = t_near + (np.arange(n) + u) * h
    d = _midpoint_intervals(np.atleast_2d(t), t_near, t_far)
    return t, d.reshape(t.shape)


def _disparity_grid(t_near, t_far, n, n_rays=None):
    if t_near <= 0:
        raise DomainError("disparity sampling requires t_near > 0")
    s_edges = np.linspace(1.0 / t_near, 1.0 / t_far, n + 1)
    t_edges = 1.0 / s_edges
    s_mids = 0.5 * (s_edges[:-1] + s_edges[1:])
    t = 1.0 / s_mids
    d = np.diff(t_edges)
    if n_rays is None:
        return t, d
    return np.tile(t, (n_rays, 1)), np.tile(d, (n_rays, 1))


def sample_pdf_bins(bin_edges, weights, n_draw, u):
    """Inverse-CDF draws from the piecewise-constant pdf ~ weights over bins."""
    w = np.asarray(weights, dtype=np.float64) + 1e-5  # keep every bin reachable
    pdf = w / w.sum()
    cdf = np.concatenate([[0.0], np.cumsum(pdf)])
    cdf[-1] = 1.0
    idx = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(weights) - 1)
    lo, hi = cdf[idx], cdf[idx + 1]
    frac = np.where(hi > lo, (u - lo) / np.where(hi == lo, 1.0, hi - lo), 0.5)
    return bin_edges[idx] + frac * (bin_edges[idx + 1] - bin_edges[idx])


def sample_ray(ray: Ray, sampler: SamplerSpec, prev_weights=None, prev_samples=None,
               epoch: int = 0) -> RaySamples:
    """Place samples on one ray according to the sampler configuration.

    IMPORTANCE needs the coarse pass (prev_samples, prev_weights); if every
    previous weight is zero it falls back to a uniform placement of the
    full coarse + fine budget.
    """
    t_near, t_far = ray.t_near, ray.t_far
    n = sampler.n_samples

    if sampler.kind is SamplerKind.UNIFORM:
        t, d = _uniform_grid(t_near, t_far, n)
        return RaySamples(t, d)

    if sampler.kind is SamplerKind.STRATIFIED:
        u = stratified_jitter(sampler.seed, epoch, (n,))
        t, d = _stratified_grid(t_near, t_far, n, u)
        return RaySamples(t, d)

    if sampler.kind is SamplerKind.DISPARITY:
        t, d = _disparity_grid(t_near, t_far, n)
        return RaySamples(t, d)

    if sampler.kind is SamplerKind.IMPORTANCE:
        n_fine = sampler.n_importance if sampler.n_importance > 0 else n
        if prev_weights is None or prev_samples is None:
            raise DomainError("importance sampling needs the coarse samples and weights")
        w = np.asarray(prev_weights, dtype=np.float64)
        if w.shape != prev_samples.t_mids.shape:
            raise DomainError("prev_weights must match prev_samples")
        if w.sum() <= 0.0:
            t, d = _uniform_grid(t_near, t_far, len(prev_samples) + n_fine)
            return RaySamples(t, d)
        coarse_t = prev_samples.t_mids
        edges = np.concatenate([
            [t_near], 0.5 * (coarse_t[:-1] + coarse_t[1:]), [t_far]
        ])
        u = (np.arange(n_fine) + stratified_jitter(sampler.seed, epoch, (n_fine,))) / n_fine
        fine_t = sample_pdf_bins(edges, w, n_fine, u)
        t = np.sort(np.unique(np.concatenate([coarse_t, fine_t])))
        d = _midpoint_intervals(t[None], t_near, t_far)[0]
        return RaySamples(t, d)

    raise DomainError(f"unknown sampler kind {sampler.kind}")


def sample_rays_batch(n_rays: int, t_near: float, t_far: float, sampler: SamplerSpec,
                      epoch: int = 0):
    """Vectorized (t_mids, intervals), both (n_rays, N), for identical ray
    extents; the jitter stream is keyed by (sampler.seed, epoch)."""
    n = sampler.n_samples
    if sampler.kind is SamplerKind.UNIFORM:
        return _uniform_grid(t_near, t_far, n, n_rays)
    if sampler.kind is SamplerKind.STRATIFIED:
        u = stratified_jitter(sampler.seed, epoch, (n_rays, n))
        h = (t_far - t_near) / n
        t = t_near + (np.arange(n) + u) * h
        d = _midpoint_intervals(t, t_near, t_far)
        return t, d
    if sampler.kind is SamplerKind.DISPARITY:
        return _disparity_grid(t_near, t_far, n, n_rays)
    raise DomainError("batch sampling supports uniform/stratified/disparity")
