"""Command-line interface.

Subcommands: render, train, sweep, stats, init-solve, table, selftest.
Every run with an --out directory writes a manifest.json capturing the full
resolved configuration and the repository version, so any output can be
reproduced byte-for-byte from its manifest.  Configuration comes from flags
and scene JSON only; environment variables are never read.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .activations import ActivationConfig, ActivationKind
from .errors import AlphainvError
from .fields import FieldKind, init_field, load_field, save_field
from .initialization import InitSpec, estimate_mean_activated, numeric_init_offset
from .reports import (
    colormap, density_ratio_map, init_alpha_histogram, report_filename,
    required_sigma_table, surface_stats, volume_stats, write_histogram_csv,
    write_ppm, write_required_sigma_csv,
)
from .scenes import load_scene, render_scene_image, scale_scene
from .training import (
    TrainConfig, default_learning_rate, scaling_sweep, train, write_loss_curve_csv,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2


def _version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return f"alphainv-{__version__}"


def _write_manifest(out_dir: Path, subcommand: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "argv": sys.argv[1:],
        "resolved": resolved,
        "version": _version_string(),
        "package": f"alphainv {__version__}",
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _floats(text: str):
    return [float(x) for x in text.split(",") if x]


def _ints(text: str):
    return [int(x) for x in text.split(",") if x]


def _activation_from_args(args) -> ActivationConfig:
    return ActivationConfig(ActivationKind.from_string(args.activation),
                            offset=args.offset, log_L=args.log_L)


def _add_activation_flags(p, default="exp_gumbel"):
    p.add_argument("--activation", default=default,
                   choices=[k.value for k in ActivationKind])
    p.add_argument("--offset", type=float, default=0.0)
    p.add_argument("--log-L", dest="log_L", type=float, default=0.0)


def _load_scaled_scene(args):
    scene = load_scene(args.scene)
    if getattr(args, "k", 1.0) != 1.0:
        scene = scale_scene(scene, args.k)
    return scene


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_render(args) -> int:
    scene = _load_scaled_scene(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for ci in range(len(scene.cameras)):
        img = render_scene_image(scene, ci, resolution=args.oracle_res)
        write_ppm(out_dir / f"oracle_{scene.name}_{scene.scale_k:g}_cam{ci}.ppm", img)
    if args.field:
        from .scenes import camera_rays
        from .training import render_field_image
        field = load_field(args.field)
        act = _activation_from_args(args)
        for ci, cam in enumerate(scene.cameras):
            origins, dirs = camera_rays(cam)
            colors, _ = render_field_image(field, act, scene, origins, dirs)
            img = np.clip(colors.reshape(cam.height, cam.width, 3), 0, 1)
            write_ppm(out_dir / f"field_{scene.name}_{scene.scale_k:g}_cam{ci}.ppm", img)
    _write_manifest(out_dir, "render", {
        "scene": str(args.scene), "k": args.k, "oracle_res": args.oracle_res,
        "field": args.field, "activation": args.activation,
    })
    return EXIT_OK


def _cmd_train(args) -> int:
    scene = _load_scaled_scene(args)
    field_kind = FieldKind.from_string(args.field_kind)
    metadata = ({"resolution": args.resolution} if field_kind is FieldKind.VOXEL_GRID
                else {"widths": [3, args.hidden, args.hidden, 4]}
                if field_kind is FieldKind.TINY_MLP else {})
    tau_target = args.tau_target if field_kind is not FieldKind.CONSTANT else 0.0
    from .seeding import substream_int
    field = init_field(field_kind, metadata, scene.bounds, tau_target,
                       seed=substream_int(args.seed, "field-init"))
    lr = args.lr if args.lr is not None else default_learning_rate(field_kind)
    cfg = TrainConfig(
        steps=args.steps, batch_rays=args.batch, learning_rate=lr,
        activation=ActivationConfig(ActivationKind.from_string(args.activation)),
        init=InitSpec(T_prime=args.T, L=None, tau=None, mu_raw=None)
        if args.init == "high_t" else None,
        seed=args.seed,
    )
    t0 = time.time()
    result = train(scene, field, cfg, oracle_resolution=args.oracle_res)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_field(result.field, out_dir / "field.fld")
    with open(out_dir / "loss_curve.csv", "w") as f:
        write_loss_curve_csv(result.loss_curve, f)
    _write_manifest(out_dir, "train", {
        "scene": str(args.scene), "k": args.k, "field_kind": field_kind.name,
        "metadata": metadata, "tau_target": tau_target, "steps": args.steps,
        "batch_rays": args.batch, "learning_rate": lr, "activation": args.activation,
        "init": args.init, "T_prime": args.T, "seed": args.seed,
        "psnr_db": result.psnr_db, "init_transmittance": result.init_transmittance,
        "diverged": result.diverged, "wall_seconds": round(time.time() - t0, 3),
    })
    print(f"psnr_db={result.psnr_db:.4f} init_transmittance="
          f"{result.init_transmittance:.4f} diverged={int(result.diverged)}")
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def _parse_recipes(text: str):
    recipes = []
    for chunk in text.split(","):
        if not chunk:
            continue
        try:
            kind_name, init_mode = chunk.split(":")
        except ValueError:
            raise AlphainvError(
                f"recipe {chunk!r} must look like 'exp_gumbel:high_t' or 'relu:none'")
        recipes.append((ActivationKind.from_string(kind_name), init_mode))
    return recipes


def _cmd_sweep(args) -> int:
    scene = load_scene(args.scene)
    recipes = _parse_recipes(args.recipes)
    cfg = TrainConfig(steps=args.steps, batch_rays=args.batch,
                      learning_rate=args.lr, seed=0,
                      init=InitSpec(T_prime=args.T, L=None, tau=None, mu_raw=None))
    report = scaling_sweep(
        scene, recipes, _floats(args.ks), _ints(args.seeds), cfg,
        field_kind=FieldKind.from_string(args.field_kind),
        field_metadata={"resolution": args.resolution},
        tau_target=args.tau_target, threads=args.threads,
        oracle_resolution=args.oracle_res, keep_fields=args.save_fields,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w") as f:
        report.write_csv(f)
    if args.save_fields:
        for (kind, init_mode, k, seed), (fld, _act) in report.fields.items():
            save_field(fld, out_dir / f"field_{scene.name}_{k:g}_{kind}_{init_mode}_s{seed}.fld")
    _write_manifest(out_dir, "sweep", {
        "scene": str(args.scene), "ks": args.ks, "recipes": args.recipes,
        "seeds": args.seeds, "steps": args.steps, "batch_rays": args.batch,
        "learning_rate": args.lr, "T_prime": args.T, "threads": args.threads,
        "field_kind": args.field_kind, "resolution": args.resolution,
        "tau_target": args.tau_target,
    })
    return EXIT_OK


def _cmd_stats(args) -> int:
    scene = _load_scaled_scene(args)
    field = load_field(args.field)
    act = _activation_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = dict(scene=scene.name, k=scene.scale_k, activation=args.activation)

    summary = volume_stats(field, act, field.bounds, grid_res=args.grid_res)
    with open(out_dir / report_filename("volume", ext="csv", **tag), "w") as f:
        summary.write_csv(f)

    smap = surface_stats(field, act, scene.cameras[args.camera], scene.near, scene.far,
                         scene.sampler)
    with open(out_dir / report_filename("surface", ext="csv", **tag), "w") as f:
        smap.write_csv(f)
    write_ppm(out_dir / report_filename("surface", ext="ppm", **tag),
              colormap(smap.sigma_map, mask=smap.mask))

    edges, counts = init_alpha_histogram(field, act, scene, n_rays=args.n_rays,
                                         seed=args.seed)
    with open(out_dir / report_filename("alpha_hist", ext="csv", **tag), "w") as f:
        write_histogram_csv(edges, counts, f)

    if args.compare:
        other = load_field(args.compare)
        omap = surface_stats(other, act, scene.cameras[args.camera], scene.near,
                             scene.far, scene.sampler)
        ratio = density_ratio_map(smap, omap)
        write_ppm(out_dir / report_filename("ratio", ext="ppm", **tag),
                  colormap(ratio.ratio, mask=ratio.mask))

    _write_manifest(out_dir, "stats", {
        "scene": str(args.scene), "k": args.k, "field": args.field,
        "activation": args.activation, "grid_res": args.grid_res,
        "camera": args.camera, "n_rays": args.n_rays, "seed": args.seed,
        "compare": args.compare,
    })
    return EXIT_OK


def _cmd_init_solve(args) -> int:
    kind = ActivationKind.from_string(args.kind)
    spec = InitSpec(T_prime=args.T, L=args.L, tau=args.tau, mu_raw=args.mu_raw)
    if kind in (ActivationKind.EXP, ActivationKind.EXP_GUMBEL):
        from .initialization import exp_init_offset
        offset = exp_init_offset(spec) - spec.mu_raw
    else:
        offset = numeric_init_offset(kind, spec, n_samples=args.samples, seed=args.seed)
    line = f"kind,T_prime,L,tau,offset\n{kind.value},{args.T!r},{args.L!r},{args.tau!r},{offset!r}\n"
    sys.stdout.write(line)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "init_solve.csv").write_text(line)
        _write_manifest(out_dir, "init-solve", {
            "kind": kind.value, "T_prime": args.T, "L": args.L, "tau": args.tau,
            "mu_raw": args.mu_raw, "samples": args.samples, "seed": args.seed,
            "offset": offset,
        })
    return EXIT_OK


def _cmd_table(args) -> int:
    rows = required_sigma_table(args.L, _ints(args.samples), _floats(args.alphas))
    write_required_sigma_csv(rows, sys.stdout)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "required_sigma.csv", "w") as f:
            write_required_sigma_csv(rows, f)
        _write_manifest(out_dir, "table", {
            "L": args.L, "samples": args.samples, "alphas": args.alphas,
        })
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return EXIT_OK if run_selftest() else EXIT_ERROR


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alphainv",
        description="Scale-robust volume rendering experiments: log-space "
                    "densities and high-transmittance initialization.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("render", help="oracle (and optional field) renders to PPM")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--oracle-res", type=int, default=1024)
    p.add_argument("--field", default=None, help="field checkpoint to render")
    _add_activation_flags(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("train", help="train a field against oracle renders")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--field-kind", default="voxel_grid",
                   choices=["constant", "voxel_grid", "tiny_mlp"])
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--tau-target", type=float, default=0.5)
    p.add_argument("--activation", default="exp_gumbel",
                   choices=[k.value for k in ActivationKind])
    p.add_argument("--init", default="high_t", choices=["none", "high_t"])
    p.add_argument("--T", type=float, default=0.99)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-res", type=int, default=1024)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="scaling sweep over k x recipes x seeds")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ks", default="0.1,1,10,25")
    p.add_argument("--recipes", default="exp_gumbel:high_t")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lr", type=float, default=2e-2)
    p.add_argument("--T", type=float, default=0.99)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--field-kind", default="voxel_grid",
                   choices=["constant", "voxel_grid", "tiny_mlp"])
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--tau-target", type=float, default=0.5)
    p.add_argument("--oracle-res", type=int, default=1024)
    p.add_argument("--save-fields", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("stats", help="volume/surface/histogram reports for a field")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--grid-res", type=int, default=64)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--n-rays", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compare", default=None, help="second checkpoint for ratio maps")
    _add_activation_flags(p)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("init-solve", help="solve the transparency offset for an activation")
    p.add_argument("--kind", required=True, choices=[k.value for k in ActivationKind])
    p.add_argument("--T", type=float, default=0.99)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--mu-raw", dest="mu_raw", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=200000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_init_solve)

    p = sub.add_parser("table", help="required-density table for target alphas")
    p.add_argument("--L", type=float, default=4.0)
    p.add_argument("--alphas", default="0.5,0.99")
    p.add_argument("--samples", default="2,64,256")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_table)

    p = sub.add_parser("selftest", help="fast invariant suite (< 60 s)")
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AlphainvError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
