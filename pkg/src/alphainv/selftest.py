"""Fast invariant suite behind `alphainv selftest` (runs in well under 60 s)."""

from __future__ import annotations

import time

import numpy as np

from .activations import ActivationConfig, ActivationKind, alpha_direct, sigmoid, softplus
from .initialization import (
    InitSpec, estimate_mean_activated, exp_init_offset, numeric_init_offset,
    simulate_init_transmittance,
)
from .reports import required_sigma_table
from .sampling import SamplerKind, SamplerSpec, sample_ray
from .scenes import bundled_scene, render_scene_image, scale_scene
from .volrend import Ray, alpha_from_sigma, composite, transmittance_log_space


def _check_form_equivalences(n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-20, 20, n)
    d = 10.0 ** rng.uniform(-3, 3, n)
    a_exp = alpha_direct(ActivationConfig(ActivationKind.EXP), x, d)
    a_gum = alpha_direct(ActivationConfig(ActivationKind.EXP_GUMBEL), x, d)
    if np.max(np.abs(a_exp - a_gum)) > 1e-12:
        return False
    z = rng.uniform(-30, 30, n)
    if np.max(np.abs(np.exp(-softplus(z)) - sigmoid(-z))) > 1e-12:
        return False
    sig = rng.uniform(0, 50, (200, 16))
    dd = 10.0 ** rng.uniform(-3, 1, (200, 16))
    prod = np.prod(1.0 - alpha_from_sigma(sig, dd), axis=1)
    direct = np.exp(-(sig * dd).sum(axis=1))
    return np.max(np.abs(prod - direct)) <= 1e-12


def _check_normalization(seed=1):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        n = rng.integers(1, 32)
        a = rng.uniform(0, 1, n) * rng.uniform(0, 1)
        out = composite(a, rng.uniform(0, 1, (n, 3)), np.sort(rng.uniform(0, 4, n)))
        if abs(out.weights.sum() + out.final_transmittance - 1.0) > 1e-9:
            return False
    return True


def _check_log_space():
    if transmittance_log_space([], []) != 1.0:
        return False
    if abs(transmittance_log_space([0.0, 0.0], [0.5, 0.5]) - np.exp(-1)) > 1e-15:
        return False
    return transmittance_log_space([50.0], [1.0]) == 0.0


def _check_required_sigma():
    rows = required_sigma_table(4.0, [2, 64, 256], [0.5, 0.99])
    for n, d, a, s in rows:
        if abs(alpha_from_sigma(s, d) - a) > 1e-9:
            return False
    return True


def _check_init_closed_form():
    for tau in (0.0, 1.0):
        spec = InitSpec(T_prime=0.99, L=4.0, tau=tau, mu_raw=0.0)
        t = simulate_init_transmittance(exp_init_offset(spec), tau, 4.0, seed=3)
        if not (0.97 <= t <= 0.995):
            return False
    return True


def _check_numeric_solver():
    spec = InitSpec(T_prime=0.99, L=4.0, tau=1.0, mu_raw=0.0)
    c = numeric_init_offset(ActivationKind.SOFTPLUS, spec, n_samples=200_000, seed=0)
    est = estimate_mean_activated(ActivationKind.SOFTPLUS, spec, c,
                                  n_samples=200_000, seed=99) * spec.L
    return abs(est - spec.log_one_over_T) / spec.log_one_over_T < 1e-3


def _check_oracle_invariance():
    scene = bundled_scene("sphere")
    base = render_scene_image(scene, 0, resolution=1024)
    for k in (0.1, 10.0):
        img = render_scene_image(scale_scene(scene, k), 0, resolution=1024)
        if np.max(np.abs(img - base)) > 1e-9:
            return False
    return True


def _check_sampler_partitions():
    ray = Ray([0, 0, 0], [0, 0, 1], 1.0, 5.0)
    for kind in (SamplerKind.UNIFORM, SamplerKind.STRATIFIED, SamplerKind.DISPARITY):
        s = sample_ray(ray, SamplerSpec(kind, 33, seed=5))
        if abs(s.intervals.sum() - ray.length) > 1e-9:
            return False
        if np.any(np.diff(s.t_mids) <= 0):
            return False
    return True


_CHECKS = [
    ("form-equivalences", _check_form_equivalences),
    ("compositing-normalization", _check_normalization),
    ("log-space-transmittance", _check_log_space),
    ("required-sigma-roundtrip", _check_required_sigma),
    ("init-closed-form", _check_init_closed_form),
    ("init-numeric-solver", _check_numeric_solver),
    ("oracle-scale-invariance", _check_oracle_invariance),
    ("sampler-partitions", _check_sampler_partitions),
]


def run_selftest() -> bool:
    ok = True
    for name, fn in _CHECKS:
        t0 = time.time()
        try:
            passed = fn()
        except Exception as e:  # a crash is a failure, not an abort
            passed = False
            print(f"FAIL {name} ({e!r})")
        dt = time.time() - t0
        if passed:
            print(f"PASS {name} ({dt:.2f}s)")
        else:
            ok = False
            if "FAIL" not in name:
                print(f"FAIL {name} ({dt:.2f}s)")
    print("selftest:", "OK" if ok else "FAILED")
    return ok
