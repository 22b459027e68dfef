"""Discrete volume rendering: alphas, transmittance, compositing, gradients.

Everything here is exact 64-bit arithmetic on explicit arrays; the backward
pass is written out analytically (no autodiff framework) so gradient
correctness can be checked against finite differences independently.

All functions are pure; per-ray rendering is embarrassingly parallel and
there is no shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import activations as act_mod
from .activations import ALPHA_CLAMP_MAX, ActivationConfig, sigmoid
from .errors import DomainError

_UNIT_NORM_TOL = 1e-12
_PARTITION_TOL = 1e-9


def _vec3(v, name):
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise DomainError(f"{name} must be a finite 3-vector")
    return v


@dataclass(frozen=True)
class Ray:
    """A ray z(t) = origin + t * direction with a [t_near, t_far] extent.

    ``direction`` must be unit length; t_far - t_near is this ray's length
    contribution to the scene's reference ray length L.
    """

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin, "origin"))
        d = _vec3(self.direction, "direction")
        if abs(np.dot(d, d) - 1.0) > 2 * _UNIT_NORM_TOL:
            raise DomainError("direction must be unit-norm within 1e-12")
        object.__setattr__(self, "direction", d)
        if not (np.isfinite(self.t_near) and np.isfinite(self.t_far)):
            raise DomainError("t_near/t_far must be finite")
        if self.t_near < 0 or self.t_far <= self.t_near:
            raise DomainError("need 0 <= t_near < t_far")

    @property
    def length(self) -> float:
        return self.t_far - self.t_near

    def at(self, t):
        """Points z(t) for scalar or array t, shape (..., 3)."""
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True)
class RaySamples:
    """Ordered sample parameters t_i and their interval lengths d_i > 0."""

    t_mids: np.ndarray
    intervals: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_mids, dtype=np.float64).reshape(-1)
        d = np.asarray(self.intervals, dtype=np.float64).reshape(-1)
        if t.shape != d.shape:
            raise DomainError("t_mids and intervals must have equal length")
        if t.size < 1:
            raise DomainError("need at least one sample")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(d))):
            raise DomainError("samples must be finite")
        if np.any(np.diff(t) <= 0):
            raise DomainError("t_mids must be strictly increasing")
        if np.any(d <= 0):
            raise DomainError("every interval must be > 0")
        object.__setattr__(self, "t_mids", t)
        object.__setattr__(self, "intervals", d)

    def __len__(self) -> int:
        return self.t_mids.size

    def check_partition(self, ray: Ray) -> None:
        """Verify the intervals fit inside the ray's [t_near, t_far]."""
        if self.intervals.sum() > ray.length + _PARTITION_TOL:
            raise DomainError("intervals exceed the ray extent t_far - t_near")


@dataclass(frozen=True)
class RenderOutput:
    """Per-ray compositing result.

    Invariant: weights.sum() + final_transmittance == 1 (to roundoff), and
    w_i = prod_{j<i}(1 - alpha_j) * alpha_i.
    """

    color: np.ndarray
    depth: float
    weights: np.ndarray
    final_transmittance: float
    alphas: np.ndarray = field(repr=False)


def alpha_from_sigma(sigma, d):
    """Opacity of a constant-density segment: alpha = 1 - exp(-sigma * d)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(sigma)) or np.any(sigma < 0):
        raise DomainError("sigma must be finite and >= 0")
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise DomainError("d must be finite and > 0")
    return -np.expm1(-sigma * d)


def _check_alphas(alphas):
    a = np.asarray(alphas, dtype=np.float64)
    if np.any(np.isnan(a)) or np.any(a < 0) or np.any(a > 1):
        raise DomainError("alphas must lie in [0, 1]")
    return a


def composite_batch(alphas, colors, t_mids, validate=True):
    """Alpha-composite a batch of rays.

    Args:
        alphas: (..., N) per-sample opacities in [0, 1]; values at exactly 1
            are clamped to 1 - 1e-15 so transmittance never hits hard zero.
        colors: (..., N, 3) per-sample colors in [0, 1].
        t_mids: (..., N) sample parameters, for the depth estimate.
        validate: skip input range checks for internally-built alphas.

    Returns:
        dict with color (..., 3), depth (...), weights (..., N),
        final_transmittance (...), alphas (..., N) (clamped).
    """
    a = _check_alphas(alphas) if validate else np.asarray(alphas, dtype=np.float64)
    a = np.clip(a, 0.0, ALPHA_CLAMP_MAX)
    colors = np.asarray(colors, dtype=np.float64)
    t_mids = np.asarray(t_mids, dtype=np.float64)
    if colors.shape[:-1] != a.shape or colors.shape[-1] != 3 or t_mids.shape != a.shape:
        raise DomainError("alphas, colors, t_mids must share the sample dimension")

    # exclusive cumulative survival: T_i = prod_{j<i} (1 - alpha_j)
    trans = np.cumprod(1.0 - a, axis=-1)
    t_excl = np.empty_like(a)
    t_excl[..., 0] = 1.0
    t_excl[..., 1:] = trans[..., :-1]
    weights = t_excl * a
    final_t = trans[..., -1] if a.shape[-1] else np.ones(a.shape[:-1])

    color = np.einsum("...n,...nc->...c", weights, colors)
    wsum = weights.sum(axis=-1)
    depth = np.divide(np.einsum("...n,...n->...", weights, t_mids), wsum,
                      out=np.zeros_like(wsum), where=wsum > 0.0)
    return {
        "color": color,
        "depth": depth,
        "weights": weights,
        "final_transmittance": final_t,
        "alphas": a,
    }


def composite(alphas, colors, t_mids=None) -> RenderOutput:
    """Single-ray compositing; empty inputs render black with T = 1."""
    a = np.asarray(alphas, dtype=np.float64).reshape(-1)
    c = np.asarray(colors, dtype=np.float64).reshape(-1, 3) if np.size(colors) else np.zeros((0, 3))
    if t_mids is None:
        t_mids = np.arange(a.size, dtype=np.float64)
    t = np.asarray(t_mids, dtype=np.float64).reshape(-1)
    if a.size != c.shape[0] or a.size != t.size:
        raise DomainError("alphas, colors, t_mids must have equal length")
    if a.size == 0:
        return RenderOutput(
            color=np.zeros(3), depth=0.0, weights=np.zeros(0),
            final_transmittance=1.0, alphas=np.zeros(0),
        )
    out = composite_batch(a[None], c[None], t[None])
    return RenderOutput(
        color=out["color"][0],
        depth=float(out["depth"][0]),
        weights=out["weights"][0],
        final_transmittance=float(out["final_transmittance"][0]),
        alphas=out["alphas"][0],
    )


def composite_backward(alphas, colors, grad_color, grad_final_transmittance=None):
    """Analytic gradients of composite_batch outputs w.r.t. alphas and colors.

    Args:
        alphas: (..., N) the *unclamped* opacities fed to composite_batch.
        colors: (..., N, 3).
        grad_color: (..., 3) upstream gradient on the composited color.
        grad_final_transmittance: optional (...,) upstream gradient on T.

    Returns:
        (d_alphas, d_colors) matching the input shapes.  Samples clamped at
        the 1 - 1e-15 ceiling get zero alpha-gradient, mirroring the clamp.
    """
    a_raw = np.asarray(alphas, dtype=np.float64)
    a = np.clip(a_raw, 0.0, ALPHA_CLAMP_MAX)
    colors = np.asarray(colors, dtype=np.float64)
    grad_color = np.asarray(grad_color, dtype=np.float64)

    surv = 1.0 - a
    trans = np.cumprod(surv, axis=-1)
    t_excl = np.concatenate([np.ones_like(a[..., :1]), trans[..., :-1]], axis=-1)
    weights = t_excl * a
    final_t = trans[..., -1]

    d_colors = weights[..., None] * grad_color[..., None, :]

    # s_i = g . (w_i c_i); the alpha_m gradient needs the suffix sum over i > m
    gc = (grad_color[..., None, :] * colors).sum(axis=-1)
    s = gc * weights
    suffix_incl = np.flip(np.cumsum(np.flip(s, axis=-1), axis=-1), axis=-1)
    suffix = suffix_incl - s

    d_alphas = gc * t_excl - suffix / surv
    if grad_final_transmittance is not None:
        g_t = np.asarray(grad_final_transmittance, dtype=np.float64)
        d_alphas = d_alphas - (g_t * final_t)[..., None] / surv
    d_alphas = np.where(a_raw > ALPHA_CLAMP_MAX, 0.0, d_alphas)
    return d_alphas, d_colors


def transmittance_log_space(sigma_log, d):
    """Final transmittance from log-densities: exp(-sum exp(log sigma_i + log d_i)).

    The per-segment optical depths are formed in log space, so there is no
    intermediate overflow for log sigma_i + log d_i <= 700; huge totals
    simply underflow to T = 0.
    """
    sigma_log = np.asarray(sigma_log, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if sigma_log.shape != d.shape:
        raise DomainError("sigma_log and d must have equal length")
    if np.any(np.isnan(sigma_log)) or np.any(np.isnan(d)) or np.any(d <= 0):
        raise DomainError("inputs must be non-NaN and d > 0")
    if sigma_log.size == 0:
        return 1.0
    with np.errstate(over="ignore"):
        tau = np.exp(sigma_log + np.log(d))
        total = tau.sum()
    return float(np.exp(-total))


def render_ray(field_params, ray: Ray, samples: RaySamples, act: ActivationConfig) -> RenderOutput:
    """Render one ray through a field: query, activate, composite.

    The field's raw density goes through ``act`` (log-space for exp_gumbel),
    color logits through a sigmoid; out-of-bounds queries contribute nothing.
    """
    from . import fields  # local import; fields does not depend on volrend

    samples.check_partition(ray)
    pts = ray.at(samples.t_mids)
    raw, logits = fields.query_many(field_params, pts)
    alphas = act_mod.alpha_direct(act, raw, samples.intervals)
    colors = sigmoid(logits)
    return composite(alphas, colors, samples.t_mids)


def render_rays_batch(field_params, act: ActivationConfig, origins, dirs, t_mids, intervals,
                      contract_fn=None):
    """Vectorized render of B rays with N samples each.

    Args:
        origins, dirs: (B, 3); dirs unit-norm.
        t_mids, intervals: (B, N) metric sample parameters / lengths.
        contract_fn: optional position remap (e.g. background contraction)
            applied to query points only; intervals stay metric.

    Returns a dict with the composite outputs plus the intermediates needed
    by the analytic backward pass (pts, raw, logits).
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    t_mids = np.asarray(t_mids, dtype=np.float64)
    intervals = np.asarray(intervals, dtype=np.float64)

    from . import fields

    pts = t_mids[..., None] * dirs[:, None, :]
    pts += origins[:, None, :]
    qpts = contract_fn(pts) if contract_fn is not None else pts
    raw, logits, cache = fields.query_many(field_params, qpts.reshape(-1, 3), with_cache=True)
    raw = raw.reshape(t_mids.shape)
    logits = logits.reshape(t_mids.shape + (3,))
    alphas = act_mod.alpha_direct(act, raw, intervals)
    colors = sigmoid(logits)
    out = composite_batch(alphas, colors, t_mids, validate=False)
    out.update(pts=qpts, raw=raw, logits=logits, sample_colors=colors, intervals=intervals,
               field_cache=cache)
    return out


def render_rays_backward(field_params, act: ActivationConfig, render_out, grad_color,
                         grad_final_transmittance=None):
    """Gradient of a batch render w.r.t. the field parameters.

    Chains composite -> alpha(x, d) -> sigmoid(color logits) -> field
    parameters, all in closed form.  Returns a flat gradient array shaped
    like ``field_params.params``.
    """
    from . import fields

    raw = render_out["raw"]
    logits = render_out["logits"]
    colors = render_out["sample_colors"]
    intervals = render_out["intervals"]

    d_alphas, d_colors = composite_backward(
        render_out["alphas"], colors, grad_color, grad_final_transmittance
    )
    d_raw = d_alphas * act_mod.dalpha_dx(act, raw, intervals)
    d_logits = d_colors * colors * (1.0 - colors)
    pts = render_out["pts"]
    return fields.backward_many(
        field_params, pts.reshape(-1, 3), d_raw.reshape(-1), d_logits.reshape(-1, 3),
        cache=render_out.get("field_cache"),
    )
