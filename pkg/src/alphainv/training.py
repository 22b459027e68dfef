"""Photometric optimization of toy fields and the scene-scaling sweep.

The sweep protocol: scale the scene by k, keep the sampler configuration
fixed, re-derive the reference ray length L from the scaled scene, retrain
from scratch, and record PSNR plus the mean transmittance at initialization.
Hyperparameters are tuned once on the k = 1 control and never varied with k.
"""

from __future__ import annotations

import concurrent.futures
import csv
import multiprocessing
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .activations import ActivationConfig, ActivationKind
from .errors import DomainError
from .fields import FieldKind, FieldParams, init_field, measure_raw_stats
from .initialization import InitSpec, init_activation_config
from .sampling import Contraction, SamplerKind, SamplerSpec, contract, sample_rays_batch
from .scenes import SceneSpec, camera_rays, ground_truth_render_batch, scale_scene
from .seeding import substream, substream_int
from .volrend import render_rays_batch, render_rays_backward

PSNR_IDENTICAL_SENTINEL = 99.0
DIVERGED_PSNR_FLOOR = 5.0

# project constants, tuned once on the k=1 control (never varied across k)
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-15
LR_VOXEL = 2e-2
LR_MLP = 1e-3
LR_CONSTANT = 2e-2


class Adam:
    """Adam with bias correction; eps is applied per parameter."""

    def __init__(self, n_params: int, lr: float, betas=ADAM_BETAS, eps: float = ADAM_EPS):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, n_params: int, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_rays: int = 512
    learning_rate: float = LR_VOXEL
    optimizer: str = "adam"  # "adam" | "sgd"
    betas: tuple = ADAM_BETAS
    eps: float = ADAM_EPS
    activation: ActivationConfig = dc_field(
        default_factory=lambda: ActivationConfig(ActivationKind.EXP_GUMBEL))
    init: InitSpec | None = None
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 0:
            raise DomainError("steps must be >= 0")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise DomainError("optimizer must be 'adam' or 'sgd'")


@dataclass
class TrainResult:
    field: FieldParams
    activation: ActivationConfig
    loss_curve: list  # [(step, loss), ...]
    diverged: bool
    psnr_db: float
    init_transmittance: float


@dataclass(frozen=True)
class SweepRow:
    k: float
    activation: str
    init_mode: str
    seed: int
    psnr_db: float
    init_transmittance: float
    diverged: bool


@dataclass
class SweepReport:
    rows: list
    fields: dict  # (kind, init_mode, k, seed) -> (FieldParams, ActivationConfig)

    def write_csv(self, fileobj) -> None:
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(
            ["k", "activation", "init_mode", "seed", "psnr_db", "init_transmittance", "diverged"])
        for r in self.rows:
            writer.writerow([repr(r.k), r.activation, r.init_mode, r.seed,
                             repr(r.psnr_db), repr(r.init_transmittance), int(r.diverged)])


def psnr(image_a, image_b) -> float:
    """Peak signal-to-noise ratio in dB; identical images report the 99.0
    sentinel instead of +inf."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    for name, img in (("image_a", a), ("image_b", b)):
        if np.any(img < -1e-9) or np.any(img > 1 + 1e-9):
            raise DomainError(f"{name} values must lie in [0, 1]")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL_SENTINEL
    return float(10.0 * np.log10(1.0 / mse))


_ORACLE_CACHE: dict = {}


def _scene_content_key(scene: SceneSpec, oracle_resolution: int):
    prims = tuple(
        (type(p).__name__, float(p.sigma), tuple(np.ravel(p.albedo)))
        + tuple(float(v) for f in ("center", "radius", "lo", "hi", "axis")
                for v in np.ravel(getattr(p, f, ())))
        for p in scene.primitives
    )
    cams = tuple(
        (tuple(c.position), tuple(c.look_at), tuple(c.up), c.fov_y_deg, c.width, c.height)
        for c in scene.cameras
    )
    return (prims, cams, scene.near, scene.far, oracle_resolution)


def scene_rays_and_targets(scene: SceneSpec, oracle_resolution: int = 1024):
    """All pixel rays of every camera plus their oracle colors.

    Cached by scene content: sweep cells that share a scene and scale reuse
    the targets.
    """
    key = _scene_content_key(scene, oracle_resolution)
    hit = _ORACLE_CACHE.get(key)
    if hit is not None:
        return hit
    origins, dirs, targets = [], [], []
    for cam in scene.cameras:
        o, d = camera_rays(cam)
        origins.append(o)
        dirs.append(d)
        targets.append(ground_truth_render_batch(scene, o, d, oracle_resolution)["color"])
    result = (np.concatenate(origins), np.concatenate(dirs), np.concatenate(targets))
    if len(_ORACLE_CACHE) > 32:  # sweeps touch a handful of (scene, k) pairs
        _ORACLE_CACHE.clear()
    _ORACLE_CACHE[key] = result
    return result


def _contract_fn(sampler: SamplerSpec):
    return contract if sampler.contraction is Contraction.MIPNERF360 else None


def render_field_image(field: FieldParams, act: ActivationConfig, scene: SceneSpec,
                       origins, dirs, chunk: int = 2048):
    """Deterministic evaluation render (uniform samples) of given rays."""
    n = origins.shape[0]
    sampler = scene.sampler
    colors = np.empty((n, 3))
    final_t = np.empty(n)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        m = sl.stop - sl.start
        t_mids, intervals = sample_rays_batch(
            m, scene.near, scene.far,
            replace(sampler, kind=SamplerKind.UNIFORM))
        out = render_rays_batch(field, act, origins[sl], dirs[sl], t_mids, intervals,
                                contract_fn=_contract_fn(sampler))
        colors[sl] = out["color"]
        final_t[sl] = out["final_transmittance"]
    return colors, final_t


def resolve_init(field: FieldParams, scene: SceneSpec, init: InitSpec, seed: int) -> InitSpec:
    """Fill unresolved InitSpec fields: L from the scene's ray length,
    (mu_raw, tau) measured from the instantiated field."""
    mu_meas, tau_meas = measure_raw_stats(field, seed=substream_int(seed, "stats"))
    return replace(
        init,
        L=init.L if init.L is not None else scene.ray_length,
        tau=init.tau if init.tau is not None else tau_meas,
        mu_raw=init.mu_raw if init.mu_raw is not None else mu_meas,
    )


def train(scene: SceneSpec, field: FieldParams, cfg: TrainConfig,
          oracle_resolution: int = 1024) -> TrainResult:
    """Minimize MSE between rendered and oracle pixel colors.

    Deterministic given cfg.seed.  A non-finite loss aborts with the
    diverged flag set rather than raising.
    """
    field = field.copy()
    act = cfg.activation
    if cfg.init is not None:
        resolved = resolve_init(field, scene, cfg.init, cfg.seed)
        act = init_activation_config(
            act.kind, resolved, seed=substream_int(cfg.seed, "init-solve"))

    origins, dirs, targets = scene_rays_and_targets(scene, oracle_resolution)
    n_pixels = origins.shape[0]

    init_colors, init_t = render_field_image(field, act, scene, origins, dirs)
    init_transmittance = float(init_t.mean())

    if cfg.optimizer == "adam":
        opt = Adam(field.params.size, cfg.learning_rate, cfg.betas, cfg.eps)
    else:
        opt = SGD(field.params.size, cfg.learning_rate)

    batch_rng = substream(cfg.seed, "batch")
    sampler = replace(scene.sampler,
                      seed=scene.sampler.seed + substream_int(cfg.seed, "sampler") % (2 ** 62))
    cfn = _contract_fn(sampler)

    loss_curve = []
    diverged = False
    for step in range(cfg.steps):
        idx = batch_rng.integers(0, n_pixels, cfg.batch_rays)
        t_mids, intervals = sample_rays_batch(
            cfg.batch_rays, scene.near, scene.far, sampler, epoch=step)
        out = render_rays_batch(field, act, origins[idx], dirs[idx], t_mids, intervals,
                                contract_fn=cfn)
        err = out["color"] - targets[idx]
        loss = float(np.mean(err * err))
        if step % cfg.log_every == 0:
            loss_curve.append((step, loss))
        if not np.isfinite(loss):
            diverged = True
            break
        grad_color = (2.0 / err.size) * err
        grad = render_rays_backward(field, act, out, grad_color)
        opt.step(field.params, grad)

    if not diverged and cfg.steps > 0:
        final_colors, _ = render_field_image(field, act, scene, origins, dirs)
        final_loss = float(np.mean((final_colors - targets) ** 2))
        loss_curve.append((cfg.steps, final_loss))
        psnr_db = psnr(np.clip(final_colors, 0, 1), targets)
    elif cfg.steps == 0:
        psnr_db = psnr(np.clip(init_colors, 0, 1), targets)
    else:
        psnr_db = float("nan")

    if not diverged and psnr_db < DIVERGED_PSNR_FLOOR:
        diverged = True
    return TrainResult(field, act, loss_curve, diverged, psnr_db, init_transmittance)


def _run_sweep_cell(args):
    """One (recipe, k, seed) cell; module-level so worker processes can run it."""
    (scene, kind_name, init_mode, k, seed, cfg, field_kind_name, field_metadata,
     tau_target, oracle_resolution, keep_field) = args
    kind = ActivationKind.from_string(kind_name)
    scaled = scale_scene(scene, k) if k != 1.0 else scene
    fld = init_field(FieldKind.from_string(field_kind_name), field_metadata,
                     scaled.bounds, tau_target, seed=substream_int(seed, "field-init"))
    init = InitSpec(T_prime=cfg.init.T_prime if cfg.init is not None else 0.99,
                    L=None, tau=None, mu_raw=None) if init_mode == "high_t" else None
    cell_cfg = replace(cfg, activation=ActivationConfig(kind), init=init, seed=seed)
    result = train(scaled, fld, cell_cfg, oracle_resolution)
    row = SweepRow(k=k, activation=kind.value, init_mode=init_mode, seed=seed,
                   psnr_db=result.psnr_db, init_transmittance=result.init_transmittance,
                   diverged=result.diverged)
    payload = (result.field, result.activation) if keep_field else None
    return row, payload


def scaling_sweep(scene: SceneSpec, recipes, ks, seeds, cfg: TrainConfig,
                  field_kind: FieldKind = FieldKind.VOXEL_GRID,
                  field_metadata: dict | None = None, tau_target: float = 0.5,
                  threads: int = 1, oracle_resolution: int = 1024,
                  keep_fields: bool = False) -> SweepReport:
    """Train every (recipe, k, seed) cell and collect the report.

    ``recipes`` is a list of (ActivationKind, init_mode) with init_mode in
    {"none", "high_t"}.  Individual cell divergence is recorded and the
    sweep continues.  Results are ordered by cell index, so the report is
    identical for any worker count.
    """
    if not recipes or not ks or not seeds:
        raise DomainError("recipes, ks and seeds must be non-empty")
    if field_metadata is None:
        field_metadata = {"resolution": 32}
    tasks = []
    for kind, init_mode in recipes:
        if init_mode not in ("none", "high_t"):
            raise DomainError(f"init_mode must be 'none' or 'high_t', got {init_mode!r}")
        for k in ks:
            for seed in seeds:
                tasks.append((scene, kind.value, init_mode, float(k), int(seed), cfg,
                              field_kind.name, dict(field_metadata), tau_target,
                              oracle_resolution, keep_fields))

    if threads > 1:
        ctx = multiprocessing.get_context("spawn")
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads,
                                                    mp_context=ctx) as pool:
            results = list(pool.map(_run_sweep_cell, tasks))
    else:
        results = [_run_sweep_cell(t) for t in tasks]

    rows, fields = [], {}
    for (row, payload) in results:
        rows.append(row)
        if payload is not None:
            fields[(row.activation, row.init_mode, row.k, row.seed)] = payload
    return SweepReport(rows=rows, fields=fields)


def write_loss_curve_csv(loss_curve, fileobj) -> None:
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["step", "loss"])
    for step, loss in loss_curve:
        writer.writerow([step, repr(loss)])


def default_learning_rate(kind: FieldKind) -> float:
    return {FieldKind.VOXEL_GRID: LR_VOXEL, FieldKind.TINY_MLP: LR_MLP,
            FieldKind.CONSTANT: LR_CONSTANT}[kind]
