"""Diagnostic reports: volume percentiles, surface density maps, density
ratios, initialization alpha histograms, and the required-density table.

Everything is emitted as CSV; maps and histograms can additionally be
rendered to 8-bit binary PPM with a small baked-in color ramp, so there is
no plotting dependency.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .activations import ActivationConfig, required_sigma, sigma as activated_sigma
from .errors import DomainError
from .fields import Bounds, FieldParams, query_many
from .sampling import SamplerSpec, sample_rays_batch
from .scenes import CameraSpec, SceneSpec, camera_rays
from .seeding import substream
from .volrend import render_rays_batch

SIGMA_FLOOR = 1e-4    # values below this are rounded up before ratios
WEIGHT_MASK_MIN = 1e-4  # rays with sum(w) below this are masked in maps


@dataclass(frozen=True)
class PercentileSummary:
    """Sorted-density band means: band i covers percentiles
    [edges[i], edges[i+1]) of the queried volume."""

    percent_edges: np.ndarray
    band_means: np.ndarray
    empty_fraction: float
    eps_empty: float

    def write_csv(self, fileobj) -> None:
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["percentile_lo", "percentile_hi", "mean_sigma"])
        for lo, hi, m in zip(self.percent_edges[:-1], self.percent_edges[1:], self.band_means):
            writer.writerow([repr(float(lo)), repr(float(hi)), repr(float(m))])
        writer.writerow(["empty_fraction", repr(self.empty_fraction), repr(self.eps_empty)])


@dataclass(frozen=True)
class SurfaceMap:
    """Per-pixel density at the ray's weight-CDF median.

    Masked pixels (total weight < w_min) hold NaN, never 0.
    """

    sigma_map: np.ndarray
    median_t: np.ndarray
    mask: np.ndarray
    w_min: float

    def write_csv(self, fileobj) -> None:
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["row", "col", "sigma", "median_t", "masked"])
        h, w = self.sigma_map.shape
        for i in range(h):
            for j in range(w):
                writer.writerow([i, j, repr(float(self.sigma_map[i, j])),
                                 repr(float(self.median_t[i, j])), int(self.mask[i, j])])


def volume_stats(field: FieldParams, act: ActivationConfig, bounds: Bounds,
                 grid_res: int = 64, percent_step: int = 2,
                 eps_empty: float = SIGMA_FLOOR) -> PercentileSummary:
    """Mean activated density per percentile band over a dense grid.

    Deterministic in grid_res and invariant to query order (values are
    sorted before banding).
    """
    if grid_res < 2:
        raise DomainError("grid_res must be >= 2")
    if not (0 < percent_step <= 100) or 100 % percent_step != 0:
        raise DomainError("percent_step must divide 100")
    axes = [np.linspace(bounds.lo[i], bounds.hi[i], grid_res) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    raw, _ = query_many(field, grid)
    sig = np.sort(np.asarray(activated_sigma(act, raw)))
    n_bands = 100 // percent_step
    bands = np.array_split(sig, n_bands)
    means = np.array([b.mean() for b in bands])
    edges = np.linspace(0.0, 100.0, n_bands + 1)
    return PercentileSummary(edges, means, float((sig < eps_empty).mean()), eps_empty)


def surface_stats(field: FieldParams, act: ActivationConfig, camera: CameraSpec,
                  near: float, far: float, sampler: SamplerSpec,
                  w_min: float = WEIGHT_MASK_MIN) -> SurfaceMap:
    """Density at the 50th percentile of each pixel's weight CDF.

    The median index is the smallest i with cumulative weight >= half the
    ray's total weight (ties resolve toward smaller t); rays with total
    weight below w_min are masked.
    """
    origins, dirs = camera_rays(camera)
    n = origins.shape[0]
    t_mids, intervals = sample_rays_batch(n, near, far, sampler)
    out = render_rays_batch(field, act, origins, dirs, t_mids, intervals)
    w = out["weights"]
    wsum = w.sum(axis=1)
    cdf = np.cumsum(w, axis=1)
    median_idx = (cdf >= 0.5 * wsum[:, None]).argmax(axis=1)

    rows = np.arange(n)
    sig = np.asarray(activated_sigma(act, out["raw"][rows, median_idx]), dtype=np.float64)
    med_t = t_mids[rows, median_idx] if t_mids.ndim == 2 else t_mids[median_idx]
    masked = wsum < w_min
    sig = np.where(masked, np.nan, sig)
    med_t = np.where(masked, np.nan, med_t)
    shape = (camera.height, camera.width)
    return SurfaceMap(sig.reshape(shape), np.asarray(med_t).reshape(shape),
                      masked.reshape(shape), w_min)


@dataclass(frozen=True)
class RatioMap:
    ratio: np.ndarray
    mask: np.ndarray
    floored_pixels: int
    floor: float


def density_ratio_map(map_a: SurfaceMap, map_b: SurfaceMap,
                      floor: float = SIGMA_FLOOR) -> RatioMap:
    """Elementwise sigma_a / sigma_b with both clamped below at ``floor``;
    masked wherever either input is masked."""
    if map_a.sigma_map.shape != map_b.sigma_map.shape:
        raise DomainError("surface maps have different dimensions")
    mask = map_a.mask | map_b.mask
    a = np.where(map_a.mask, np.nan, np.maximum(map_a.sigma_map, floor))
    b = np.where(map_b.mask, np.nan, np.maximum(map_b.sigma_map, floor))
    floored = int(np.nansum((map_a.sigma_map < floor) & ~map_a.mask)
                  + np.nansum((map_b.sigma_map < floor) & ~map_b.mask))
    with np.errstate(invalid="ignore"):
        ratio = np.where(mask, np.nan, a / b)
    return RatioMap(ratio, mask, floored, floor)


def required_sigma_table(L: float, sample_counts, alpha_targets):
    """Rows (N, d = L/N, alpha, sigma) for each sample count x target alpha."""
    if L <= 0:
        raise DomainError("L must be > 0")
    counts = [int(n) for n in sample_counts]
    alphas = [float(a) for a in alpha_targets]
    if not counts or not alphas:
        raise DomainError("sample_counts and alpha_targets must be non-empty")
    rows = []
    for n in counts:
        if n < 1:
            raise DomainError("sample counts must be >= 1")
        d = L / n
        for a in alphas:
            rows.append((n, d, a, float(required_sigma(a, d))))
    return rows


def write_required_sigma_csv(rows, fileobj) -> None:
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["n_samples", "interval_d", "alpha", "sigma"])
    for n, d, a, s in rows:
        writer.writerow([n, repr(d), repr(a), repr(s)])


def init_alpha_histogram(field: FieldParams, act: ActivationConfig, scene: SceneSpec,
                         n_rays: int = 1024, bins: int = 50, seed: int = 0):
    """Histogram of every per-sample alpha over seeded random pixel rays.

    Returns (bin_edges, counts) on fixed bins spanning [0, 1].
    """
    if n_rays < 1:
        raise DomainError("n_rays must be >= 1")
    origins_all, dirs_all = [], []
    for cam in scene.cameras:
        o, d = camera_rays(cam)
        origins_all.append(o)
        dirs_all.append(d)
    origins_all = np.concatenate(origins_all)
    dirs_all = np.concatenate(dirs_all)
    rng = substream(seed, "stats")
    idx = rng.integers(0, origins_all.shape[0], n_rays)
    t_mids, intervals = sample_rays_batch(n_rays, scene.near, scene.far, scene.sampler)
    out = render_rays_batch(field, act, origins_all[idx], dirs_all[idx], t_mids, intervals)
    counts, edges = np.histogram(out["alphas"].ravel(), bins=bins, range=(0.0, 1.0))
    return edges, counts


def write_histogram_csv(edges, counts, fileobj) -> None:
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["bin_lo", "bin_hi", "count"])
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def report_filename(report: str, scene: str, k: float, activation: str, ext: str) -> str:
    return f"{report}_{scene}_{k:g}_{activation}.{ext}"


# ---------------------------------------------------------------------------
# PPM output
# ---------------------------------------------------------------------------

# compact viridis-like ramp; linearly interpolated
_RAMP = np.array([
    [0.267004, 0.004874, 0.329415],
    [0.282623, 0.140926, 0.457517],
    [0.253935, 0.265254, 0.529983],
    [0.206756, 0.371758, 0.553117],
    [0.163625, 0.471133, 0.558148],
    [0.127568, 0.566949, 0.550556],
    [0.134692, 0.658636, 0.517649],
    [0.477504, 0.821444, 0.318195],
    [0.993248, 0.906157, 0.143936],
])
_MASK_GRAY = np.array([0.35, 0.35, 0.35])


def colormap(values: np.ndarray, vmin=None, vmax=None, mask=None) -> np.ndarray:
    """Map scalars to RGB via the baked-in ramp; masked pixels go gray."""
    v = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(v)
    if vmin is None:
        vmin = float(v[finite].min()) if finite.any() else 0.0
    if vmax is None:
        vmax = float(v[finite].max()) if finite.any() else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    t = np.clip((np.where(finite, v, vmin) - vmin) / span, 0.0, 1.0)
    pos = t * (len(_RAMP) - 1)
    i0 = np.clip(np.floor(pos).astype(int), 0, len(_RAMP) - 2)
    frac = (pos - i0)[..., None]
    rgb = _RAMP[i0] * (1 - frac) + _RAMP[i0 + 1] * frac
    bad = ~finite if mask is None else (mask | ~finite)
    rgb[bad] = _MASK_GRAY
    return rgb


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 image from float RGB in [0, 1], shape (H, W, 3)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DomainError("write_ppm expects an (H, W, 3) array")
    data = (np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w, _ = data.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())
