"""Toy density + color fields: constant, trilinear voxel grid, tiny MLP.

Each field maps a 3D point to a raw (pre-activation) density scalar and
three color logits, with exact analytic parameter gradients.  Out-of-bounds
queries return raw density -inf (the "empty space" sentinel, sigma = 0).

Checkpoint format (little-endian):
    bytes  0..15   magic b"ALPHAINV-FLD\\x00\\x00\\x00\\x00"
    bytes 16..19   u32 field kind (0 constant, 1 voxel_grid, 2 tiny_mlp)
    bytes 20..23   u32 metadata length M
    bytes 24..24+M utf-8 JSON: {"metadata": {...}, "bounds": {"lo": [...], "hi": [...]}}
    rest           float64 parameter array
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .activations import ActivationConfig, ActivationKind
from .errors import CapabilityError, DomainError

CHECKPOINT_MAGIC = b"ALPHAINV-FLD\x00\x00\x00\x00"

# trilinear interpolation of iid corner noise shrinks the pointwise std by
# sqrt(E[sum w^2]) = sqrt(8/27); corners are scaled up to compensate
_VOXEL_STD_GAIN = float(np.sqrt(27.0 / 8.0))


class FieldKind(enum.IntEnum):
    CONSTANT = 0
    VOXEL_GRID = 1
    TINY_MLP = 2

    @classmethod
    def from_string(cls, name: str) -> "FieldKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise DomainError(f"unknown field kind {name!r}")


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box in scene units."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("bounds must be finite")
        if np.any(hi <= lo):
            raise DomainError("bounds must have positive extent on each axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + rng.random((n, 3)) * (self.hi - self.lo)

    def scaled(self, k: float) -> "Bounds":
        return Bounds(self.lo * k, self.hi * k)


@dataclass(frozen=True)
class FieldParams:
    """A field's trainable parameters plus the metadata to interpret them.

    Parameter layout:
        CONSTANT:   [raw_density, logit_r, logit_g, logit_b]
        VOXEL_GRID: R^3 density nodes (C order), then R^3 x 3 color logits
                    (C order, channel last)
        TINY_MLP:   W1 (h1 x 3), b1, W2 (h2 x h1), b2, W3 (4 x h2), b3;
                    output row 0 is density, rows 1..3 are color logits
    """

    kind: FieldKind
    params: np.ndarray
    metadata: dict
    bounds: Bounds

    def __post_init__(self):
        p = np.ascontiguousarray(self.params, dtype=np.float64).reshape(-1)
        expected = param_count(self.kind, self.metadata)
        if p.size != expected:
            raise DomainError(
                f"{self.kind.name} with metadata {self.metadata} needs "
                f"{expected} parameters, got {p.size}"
            )
        object.__setattr__(self, "params", p)

    def copy(self) -> "FieldParams":
        return replace(self, params=self.params.copy())


def param_count(kind: FieldKind, metadata: dict) -> int:
    if kind is FieldKind.CONSTANT:
        return 4
    if kind is FieldKind.VOXEL_GRID:
        r = int(metadata["resolution"])
        if r < 2:
            raise DomainError("voxel grid needs resolution >= 2")
        return r ** 3 + 3 * r ** 3
    if kind is FieldKind.TINY_MLP:
        w = _mlp_widths(metadata)
        return sum(w[i + 1] * w[i] + w[i + 1] for i in range(len(w) - 1))
    raise DomainError(f"unknown field kind {kind}")


def _mlp_widths(metadata: dict):
    w = tuple(int(x) for x in metadata["widths"])
    if len(w) != 4 or w[0] != 3 or w[-1] != 4 or min(w) < 1:
        raise DomainError("tiny MLP widths must be (3, h1, h2, 4)")
    return w


def _mlp_views(field: FieldParams):
    """Slice the flat parameter vector into weight/bias views (no copies)."""
    w = _mlp_widths(field.metadata)
    p = field.params
    views, off = [], 0
    for i in range(3):
        n_w, n_b = w[i + 1] * w[i], w[i + 1]
        views.append((p[off:off + n_w].reshape(w[i + 1], w[i]), p[off + n_w:off + n_w + n_b]))
        off += n_w + n_b
    return views


def _voxel_views(field: FieldParams):
    r = int(field.metadata["resolution"])
    dens = field.params[: r ** 3].reshape(r, r, r)
    cols = field.params[r ** 3:].reshape(r, r, r, 3)
    return r, dens, cols


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def init_field(kind: FieldKind, metadata: dict, bounds: Bounds, tau_target: float,
               seed) -> FieldParams:
    """Create a field whose raw density has ~zero mean and std ~tau_target.

    Deterministic given the seed.  CONSTANT fields have zero variance by
    construction and require tau_target = 0.
    """
    if tau_target < 0 or not np.isfinite(tau_target):
        raise DomainError("tau_target must be finite and >= 0")
    rng = np.random.default_rng(seed)

    if kind is FieldKind.CONSTANT:
        if tau_target != 0:
            raise DomainError("CONSTANT field has zero output std; pass tau_target=0")
        return FieldParams(kind, np.zeros(4), dict(metadata), bounds)

    if kind is FieldKind.VOXEL_GRID:
        r = int(metadata["resolution"])
        n = r ** 3
        if tau_target > 0:
            dens = rng.normal(0.0, tau_target * _VOXEL_STD_GAIN, n)
            dens -= dens.mean()
        else:
            dens = np.zeros(n)
        params = np.concatenate([dens, np.zeros(3 * n)])
        return FieldParams(kind, params, dict(metadata), bounds)

    if kind is FieldKind.TINY_MLP:
        widths = _mlp_widths(metadata)
        chunks = []
        for i in range(3):
            fan_in = widths[i]
            bound = np.sqrt(6.0 / fan_in)  # Kaiming uniform, sqrt(2) gain
            chunks.append(rng.uniform(-bound, bound, widths[i + 1] * fan_in))
            chunks.append(np.zeros(widths[i + 1]))
        field = FieldParams(kind, np.concatenate(chunks), dict(metadata), bounds)
        return _calibrate_mlp_density_head(field, tau_target, rng)

    raise DomainError(f"unknown field kind {kind}")


def _calibrate_mlp_density_head(field: FieldParams, tau_target: float,
                                rng: np.random.Generator, n_probe: int = 20000) -> FieldParams:
    """Affinely rescale the density output row to hit (mean 0, std tau_target)."""
    out = field.copy()
    (w1, b1), (w2, b2), (w3, b3) = _mlp_views(out)
    if tau_target == 0:
        w3[0, :] = 0.0
        b3[0] = 0.0
        return out
    pts = out.bounds.sample_uniform(rng, n_probe)
    raw, _ = query_many(out, pts)
    m, s = raw.mean(), raw.std()
    if s == 0:
        raise DomainError("degenerate MLP init: zero output std before calibration")
    w3[0, :] *= tau_target / s
    b3[0] = (b3[0] - m) * tau_target / s
    return out


def measure_raw_stats(field: FieldParams, n_samples: int = 100_000, seed=0):
    """Empirical (mean, std) of raw density over uniform in-bounds points."""
    rng = np.random.default_rng(seed)
    pts = field.bounds.sample_uniform(rng, n_samples)
    raw, _ = query_many(field, pts)
    return float(raw.mean()), float(raw.std())


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def query_many(field: FieldParams, pts: np.ndarray, with_cache: bool = False):
    """Raw density (M,) and color logits (M, 3) at points (M, 3).

    Out-of-bounds rows get raw = -inf and logits = 0.  With ``with_cache``
    the return gains a third element holding forward intermediates that
    backward_many can reuse.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise DomainError("query positions must be finite")
    inside = field.bounds.contains(pts)
    cache = {"inside": inside}

    if field.kind is FieldKind.CONSTANT:
        raw = np.where(inside, field.params[0], -np.inf)
        logits = np.where(inside[:, None], field.params[1:4], 0.0)

    elif field.kind is FieldKind.VOXEL_GRID:
        r, dens, cols = _voxel_views(field)
        raw = np.full(pts.shape[0], -np.inf)
        logits = np.zeros((pts.shape[0], 3))
        if np.any(inside):
            flat8, wts = _corner_weights(field, pts[inside], r)
            raw[inside] = np.einsum("km,km->m", wts, dens.reshape(-1)[flat8])
            logits[inside] = np.einsum("km,kmc->mc", wts, cols.reshape(-1, 3)[flat8])
            cache.update(flat8=flat8, wts=wts)

    elif field.kind is FieldKind.TINY_MLP:
        h1, h2, out = _mlp_forward(field, pts)
        raw = np.where(inside, out[:, 0], -np.inf)
        logits = np.where(inside[:, None], out[:, 1:4], 0.0)
        cache.update(h1=h1, h2=h2)

    else:
        raise DomainError(f"unknown field kind {field.kind}")

    return (raw, logits, cache) if with_cache else (raw, logits)


def query(field: FieldParams, p):
    """Single-point query -> (raw_density, color_logits)."""
    raw, logits = query_many(field, np.asarray(p, dtype=np.float64).reshape(1, 3))
    return float(raw[0]), logits[0]


def _corner_weights(field: FieldParams, pts, r):
    """Flat node indices (8, M) and trilinear weights (8, M) of each
    point's enclosing cell corners."""
    u = (pts - field.bounds.lo) / (field.bounds.hi - field.bounds.lo) * (r - 1)
    idx = np.clip(np.floor(u).astype(np.int64), 0, r - 2)
    frac = u - idx
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    base = (idx[:, 0] * r + idx[:, 1]) * r + idx[:, 2]
    flat8 = base[None, :] + _corner_flat_steps(r)[:, None]
    wts = np.stack([
        gx * gy * gz, gx * gy * fz, gx * fy * gz, gx * fy * fz,
        fx * gy * gz, fx * gy * fz, fx * fy * gz, fx * fy * fz,
    ])
    return flat8, wts


@lru_cache(maxsize=None)
def _corner_flat_steps(r: int) -> np.ndarray:
    # corner order matches the weight stack: (a, b, c) for a,b,c in {0,1}^3
    return np.array([((a * r) + b) * r + c for a in (0, 1) for b in (0, 1) for c in (0, 1)],
                    dtype=np.int64)


def _mlp_forward(field: FieldParams, pts):
    (w1, b1), (w2, b2), (w3, b3) = _mlp_views(field)
    h1 = np.maximum(pts @ w1.T + b1, 0.0)
    h2 = np.maximum(h1 @ w2.T + b2, 0.0)
    return h1, h2, h2 @ w3.T + b3


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def backward_many(field: FieldParams, pts, d_raw, d_logits, grad_out=None, cache=None):
    """Accumulate d(loss)/d(params) given upstream gradients at query points.

    Out-of-bounds points are skipped (their outputs are constants).  Returns
    ``grad_out`` (allocated if None), added to in place.  ``cache`` from
    query_many(..., with_cache=True) skips recomputing the forward pass.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    d_raw = np.asarray(d_raw, dtype=np.float64).reshape(-1)
    d_logits = np.asarray(d_logits, dtype=np.float64).reshape(-1, 3)
    if grad_out is None:
        grad_out = np.zeros_like(field.params)
    inside = cache["inside"] if cache is not None else field.bounds.contains(pts)

    if field.kind is FieldKind.CONSTANT:
        grad_out[0] += d_raw[inside].sum()
        grad_out[1:4] += d_logits[inside].sum(axis=0)
        return grad_out

    if field.kind is FieldKind.VOXEL_GRID:
        r = int(field.metadata["resolution"])
        if not np.any(inside):
            return grad_out
        if cache is not None and "flat8" in cache:
            flat8, wts = cache["flat8"], cache["wts"]
        else:
            flat8, wts = _corner_weights(field, pts[inside], r)
        n = r ** 3
        dr, dl = d_raw[inside], d_logits[inside]
        idx_all = flat8.ravel()
        grad_out[:n] += np.bincount(idx_all, weights=(wts * dr).ravel(), minlength=n)
        gc = grad_out[n:].reshape(-1, 3)
        for ch in range(3):
            gc[:, ch] += np.bincount(idx_all, weights=(wts * dl[:, ch]).ravel(), minlength=n)
        return grad_out

    if field.kind is FieldKind.TINY_MLP:
        (w1, b1), (w2, b2), (w3, b3) = _mlp_views(field)
        if cache is not None and "h1" in cache:
            h1, h2 = cache["h1"], cache["h2"]
        else:
            h1, h2, _ = _mlp_forward(field, pts)
        d_out = np.concatenate([d_raw[:, None], d_logits], axis=1)
        d_out = np.where(inside[:, None], d_out, 0.0)
        g = FieldParams(field.kind, grad_out, field.metadata, field.bounds)
        (gw1, gb1), (gw2, gb2), (gw3, gb3) = _mlp_views(g)
        gw3 += d_out.T @ h2
        gb3 += d_out.sum(axis=0)
        dh2 = (d_out @ w3) * (h2 > 0)
        gw2 += dh2.T @ h1
        gb2 += dh2.sum(axis=0)
        dh1 = (dh2 @ w2) * (h1 > 0)
        gw1 += dh1.T @ pts
        gb1 += dh1.sum(axis=0)
        return grad_out

    raise DomainError(f"unknown field kind {field.kind}")


def backward(field: FieldParams, p, d_raw: float, d_logits):
    """Single-point gradient contribution, as a fresh flat array."""
    return backward_many(
        field, np.asarray(p).reshape(1, 3), np.asarray([d_raw]), np.asarray(d_logits).reshape(1, 3)
    )


# ---------------------------------------------------------------------------
# density rescaling and checkpoints
# ---------------------------------------------------------------------------

def scale_field_density(field: FieldParams, k: float, act: ActivationConfig) -> FieldParams:
    """Exactly rescale the field's density by 1/k via a -log k raw shift.

    Only the exp-family activations admit this (sigma = exp(x) turns an
    additive shift into a multiplicative factor); relu/softplus have no
    exact pre-activation transform and raise CapabilityError.
    """
    if not (np.isfinite(k) and k > 0):
        raise DomainError("scale factor k must be finite and > 0")
    if act.kind not in (ActivationKind.EXP, ActivationKind.EXP_GUMBEL):
        raise CapabilityError(
            f"no exact density rescaling exists for {act.kind.value}; "
            "only exp/exp_gumbel support scale_field_density"
        )
    out = field.copy()
    shift = -np.log(k)
    if field.kind is FieldKind.CONSTANT:
        out.params[0] += shift
    elif field.kind is FieldKind.VOXEL_GRID:
        r = int(field.metadata["resolution"])
        out.params[: r ** 3] += shift
    elif field.kind is FieldKind.TINY_MLP:
        (_, _), (_, _), (_, b3) = _mlp_views(out)
        b3[0] += shift
    else:
        raise DomainError(f"unknown field kind {field.kind}")
    return out


def save_field(field: FieldParams, path) -> None:
    meta = {
        "metadata": field.metadata,
        "bounds": {"lo": field.bounds.lo.tolist(), "hi": field.bounds.hi.tolist()},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", int(field.kind), len(blob)))
        f.write(blob)
        f.write(field.params.astype("<f8").tobytes())


def load_field(path) -> FieldParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[:16] != CHECKPOINT_MAGIC:
        raise DomainError(f"{path}: not a field checkpoint (bad magic)")
    kind_u32, meta_len = struct.unpack("<II", data[16:24])
    meta = json.loads(data[24:24 + meta_len].decode("utf-8"))
    params = np.frombuffer(data[24 + meta_len:], dtype="<f8").astype(np.float64)
    bounds = Bounds(np.array(meta["bounds"]["lo"]), np.array(meta["bounds"]["hi"]))
    return FieldParams(FieldKind(kind_u32), params, meta["metadata"], bounds)
