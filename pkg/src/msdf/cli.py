"""Command-line front-end for the fitting and generation pipeline.

Commands: fit, bench-rep, extract, fm-train, fm-sample, eval-gen, inspect.
Every command takes --config/--seed/--workers/--verbose; MSDF_NUM_THREADS
caps intra-op threading.  Exit codes: 0 success, 1 partial failure,
2 invalid config or arguments.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import json
import os
import sys
import time
import zlib

import numpy as np

from . import __version__
from .baselines import budget_sweep
from .channels import ChannelStats, normalize
from .config import (ConfigError, ManifestEntry, RunConfig, load_config,
                     load_manifest, write_effective_config)
from .extraction import active_cell_mask, marching_cubes_masked, chamfer_to_mesh
from .finetune import FineTuneHistory, fine_tune
from .geometry.kernels import set_thread_cap
from .geometry.mesh import load_mesh, normalize_to_unit_cube, save_obj
from .geometry.oracle import SdfOracle
from .geometry.sampling import sample_surface
from .metrics import set_metrics
from .mosaic import MosaicSdf, initialize
from .mosaic_io import load as load_bank, save as save_bank
from .flowmatch import (ModelConfig, TrainConfig, VelocityModel, sample_to_shape,
                        train)


def _shape_seed(global_seed: int, shape_id: str, *extra: int) -> int:
    """Stable per-shape seed derived from the run seed and the shape id."""
    words = [global_seed, zlib.crc32(shape_id.encode("utf-8")), *extra]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0] >> 1)


def _log(args, msg: str) -> None:
    if args.verbose:
        print(msg, flush=True)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# --- fit ---------------------------------------------------------------------

def _fit_one(entry: ManifestEntry, cfg: RunConfig, seed: int, out_path: str):
    """Fit one shape end to end; returns the log row."""
    mesh = normalize_to_unit_cube(load_mesh(entry.mesh), margin=0.05)
    oracle = SdfOracle(mesh)
    begin = time.perf_counter()
    bank = initialize(oracle, cfg.n, cfg.k, seed)
    history = FineTuneHistory()
    fitted = fine_tune(bank, oracle, steps=cfg.fine_tune_steps, lam=cfg.lam,
                       batch=cfg.batch, lr=cfg.lr, seed=seed,
                       surface_count=cfg.surface_count,
                       near_count=cfg.near_count,
                       near_variance=cfg.near_variance, history=history)
    seconds = time.perf_counter() - begin
    save_bank(fitted, out_path)
    mask = active_cell_mask(fitted.centers, fitted.scales, cfg.grid_res)
    extraction = marching_cubes_masked(fitted.eval, cfg.grid_res, mask)
    if extraction.is_empty:
        chamfer = float("nan")
    else:
        chamfer = chamfer_to_mesh(extraction.to_mesh(), mesh,
                                  samples=cfg.chamfer_samples, seed=seed)
    init_loss = history.losses[0] if history.losses else float("nan")
    final_loss = history.losses[-1] if history.losses else float("nan")
    return [entry.id, f"{init_loss:.6g}", f"{final_loss:.6g}",
            f"{chamfer:.6g}", f"{seconds:.2f}"]


def _fit_star(job):
    return _fit_one(*job)


def cmd_fit(args, cfg: RunConfig) -> int:
    entries = load_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    write_effective_config(cfg, args.out_dir)
    jobs = []
    for entry in entries:
        out_path = os.path.join(args.out_dir, f"{entry.id}.msdf")
        if os.path.exists(out_path):
            _log(args, f"skip {entry.id}: output exists")
            continue
        if not os.path.exists(entry.mesh):
            print(f"fit {entry.id}: mesh not found: {entry.mesh}", file=sys.stderr)
            continue
        jobs.append((entry, cfg, _shape_seed(args.seed, entry.id), out_path))

    def run_jobs():
        if args.workers > 1 and len(jobs) > 1:
            import multiprocessing as mp
            with mp.get_context("fork").Pool(args.workers) as pool:
                results = pool.imap(_fit_star, jobs)
                for job in jobs:
                    try:
                        yield next(results)
                    except StopIteration:
                        return
                    except Exception as exc:
                        print(f"fit {job[0].id} failed: {exc}", file=sys.stderr)
        else:
            for job in jobs:
                try:
                    yield _fit_one(*job)
                except Exception as exc:
                    print(f"fit {job[0].id} failed: {exc}", file=sys.stderr)

    log_path = os.path.join(args.out_dir, "fit_log.csv")
    new_log = not os.path.exists(log_path)
    rows = []
    with open(log_path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new_log:
            writer.writerow(["id", "init_loss", "final_loss", "chamfer", "seconds"])
        for row in run_jobs():
            writer.writerow(row)
            fh.flush()
            rows.append(row)
            _log(args, f"fit {row[0]}: chamfer {row[3]} in {row[4]}s")
    failures = sum(1 for e in entries if not os.path.exists(
        os.path.join(args.out_dir, f"{e.id}.msdf")))
    if rows:
        from .report import render_fit_figure
        render_fit_figure([r[0] for r in rows],
                          [float(r[3]) for r in rows],
                          [float(r[4]) for r in rows],
                          os.path.join(args.out_dir, "fit_log.png"))
    print(f"fit: {len(rows)} fitted, {len(entries) - len(jobs)} skipped, "
          f"{failures} missing or failed")
    return 1 if failures else 0


# --- bench-rep -----------------------------------------------------------------

def cmd_bench_rep(args, cfg: RunConfig) -> int:
    entries = load_manifest(args.manifest)
    budgets = [int(b) for b in args.budgets.split(",")]
    out_dir = os.path.dirname(os.path.abspath(args.out_csv))
    write_effective_config(cfg, out_dir)
    all_rows = []
    for entry in entries:
        mesh = normalize_to_unit_cube(load_mesh(entry.mesh), margin=0.05)
        oracle = SdfOracle(mesh)
        _log(args, f"bench {entry.id}: budgets {budgets}")
        all_rows.extend(budget_sweep(
            oracle, budgets, mesh_id=entry.id, k=cfg.k,
            fine_tune_steps=cfg.fine_tune_steps,
            triplane_steps=cfg.fine_tune_steps, grid_res=cfg.grid_res,
            seed=_shape_seed(args.seed, entry.id),
            chamfer_samples=cfg.chamfer_samples))
    _write_csv(args.out_csv,
               ["mesh_id", "representation", "budget", "chamfer",
                "fit_seconds", "extract_seconds"],
               [[r.mesh_id, r.representation, r.budget, f"{r.chamfer:.6g}",
                 f"{r.fit_seconds:.2f}", f"{r.extract_seconds:.2f}"]
                for r in all_rows])
    from .report import render_sweep_figure
    render_sweep_figure(all_rows, os.path.splitext(args.out_csv)[0] + ".png")
    print(f"bench-rep: {len(all_rows)} rows -> {args.out_csv}")
    return 0


# --- extract -------------------------------------------------------------------

def cmd_extract(args, cfg: RunConfig) -> int:
    if os.path.isdir(args.input):
        paths = sorted(glob.glob(os.path.join(args.input, "*.msdf")))
        out_dir = args.out
    else:
        paths = [args.input]
        out_dir = os.path.dirname(os.path.abspath(args.out))
    if not paths:
        print(f"extract: no .msdf files in {args.input}", file=sys.stderr)
        return 1
    os.makedirs(out_dir, exist_ok=True)
    write_effective_config(cfg, out_dir)
    failures = 0
    for path in paths:
        bank = load_bank(path)
        mask = active_cell_mask(bank.centers, bank.scales, cfg.grid_res)
        result = marching_cubes_masked(bank.eval, cfg.grid_res, mask)
        name = os.path.splitext(os.path.basename(path))[0]
        if result.is_empty:
            print(f"extract {name}: empty level set at R={cfg.grid_res}",
                  file=sys.stderr)
            failures += 1
            continue
        out_path = (args.out if len(paths) == 1 and not os.path.isdir(args.input)
                    else os.path.join(out_dir, f"{name}.obj"))
        save_obj(result.to_mesh(), out_path)
        _log(args, f"extract {name}: {len(result.faces)} faces, "
                   f"{result.seconds:.2f}s -> {out_path}")
    print(f"extract: {len(paths) - failures} meshes, {failures} empty")
    return 1 if failures else 0


# --- fm-train ------------------------------------------------------------------

def cmd_fm_train(args, cfg: RunConfig) -> int:
    entries = load_manifest(args.manifest)
    banks, classes = [], []
    for entry in entries:
        path = os.path.join(args.msdf_dir, f"{entry.id}.msdf")
        if not os.path.exists(path):
            print(f"fm-train: missing {path}", file=sys.stderr)
            return 1
        banks.append(load_bank(path))
        classes.append(entry.class_id)
    n, k = banks[0].n, banks[0].k
    for entry, bank in zip(entries, banks):
        if bank.n != n or bank.k != k:
            print(f"fm-train: {entry.id} has shape (n={bank.n}, k={bank.k}), "
                  f"expected (n={n}, k={k})", file=sys.stderr)
            return 2

    from .channels import estimate_stats
    stats = estimate_stats(banks, seed=args.seed)
    dataset = [(normalize(bank, stats).to_matrix(), cid)
               for bank, cid in zip(banks, classes)]
    num_classes = max(classes) + 1
    model_cfg = ModelConfig(d=4 + k ** 3, num_classes=num_classes,
                            h=cfg.model_h, layers=cfg.model_layers,
                            heads=cfg.model_heads)
    model = VelocityModel(model_cfg, seed=args.seed)
    train_cfg = TrainConfig(steps=cfg.fm_steps, batch=cfg.fm_batch, lr=cfg.fm_lr,
                            p_uncond=cfg.p_uncond, sigma=cfg.sigma,
                            ema_decay=cfg.ema_decay, seed=args.seed,
                            log_every=50 if args.verbose else 0)
    history: list[float] = []
    begin = time.perf_counter()
    train(dataset, model, train_cfg, history=history)
    seconds = time.perf_counter() - begin

    out_dir = os.path.dirname(os.path.abspath(args.out_ckpt))
    os.makedirs(out_dir, exist_ok=True)
    write_effective_config(cfg, out_dir)
    model.save(args.out_ckpt, ema=model.ema_shadow, extra={
        "n": n, "k": k,
        "stats": {"p_mean": [float(v) for v in stats.p_mean],
                  "p_scale": float(stats.p_scale),
                  "s_mean": float(stats.s_mean),
                  "s_scale": float(stats.s_scale)},
        "train": dataclasses.asdict(train_cfg),
        "dataset_size": len(dataset),
    })
    loss_csv = os.path.splitext(args.out_ckpt)[0] + "_loss.csv"
    _write_csv(loss_csv, ["step", "loss"],
               [[i, f"{v:.8g}"] for i, v in enumerate(history)])
    from .report import render_loss_figure
    render_loss_figure(history, os.path.splitext(loss_csv)[0] + ".png",
                       title="velocity regression loss")
    print(f"fm-train: {cfg.fm_steps} steps in {seconds:.1f}s, "
          f"loss {history[0]:.4f} -> {history[-1]:.4f} -> {args.out_ckpt}")
    return 0


# --- fm-sample -----------------------------------------------------------------

def cmd_fm_sample(args, cfg: RunConfig) -> int:
    model, trailer = VelocityModel.load(args.ckpt, use_ema=not args.raw_weights)
    n, k = int(trailer["n"]), int(trailer["k"])
    st = trailer["stats"]
    stats = ChannelStats(np.asarray(st["p_mean"]), st["p_scale"],
                         st["s_mean"], st["s_scale"])
    omegas = [float(w) for w in str(args.omega).split(",")]
    os.makedirs(args.out_dir, exist_ok=True)
    write_effective_config(cfg, args.out_dir)
    rows, failures = [], 0
    for omega in omegas:
        sub = os.path.join(args.out_dir, f"omega_{omega:g}")
        os.makedirs(sub, exist_ok=True)
        for i in range(args.count):
            seed = _shape_seed(args.seed, f"{args.class_id}/{omega:g}", i)
            shape = sample_to_shape(model, stats, args.class_id, omega,
                                    n=n, k=k, solver=cfg.solver,
                                    steps=cfg.solver_steps, seed=seed,
                                    grid_res=cfg.grid_res)
            name = f"sample_c{args.class_id}_{i:03d}"
            if shape.mesh is None:
                print(f"{name} (omega={omega:g}): empty level set, no mesh",
                      file=sys.stderr)
                failures += 1
                mesh_file = ""
            else:
                mesh_file = os.path.join(sub, name + ".obj")
                save_obj(shape.mesh, mesh_file)
            print(f"{name} omega={omega:g}: NFE {shape.nfe}, "
                  f"{shape.seconds:.2f}s sampling")
            rows.append([name, args.class_id, f"{omega:g}", cfg.solver,
                         shape.nfe, f"{shape.seconds:.3f}", seed,
                         os.path.basename(mesh_file) if mesh_file else ""])
    _write_csv(os.path.join(args.out_dir, "samples.csv"),
               ["sample", "class", "omega", "solver", "nfe", "seconds",
                "seed", "mesh_file"], rows)
    print(f"fm-sample: {len(rows) - failures} meshes, {failures} empty "
          f"-> {args.out_dir}")
    return 1 if failures else 0


# --- eval-gen ------------------------------------------------------------------

def _cloud_from_mesh(mesh, count: int, seed: int) -> np.ndarray:
    return sample_surface(mesh, count, seed).points


def cmd_eval_gen(args, cfg: RunConfig) -> int:
    gen_paths = sorted(glob.glob(os.path.join(args.gen_dir, "*.obj")))
    if not gen_paths:
        print(f"eval-gen: no .obj files in {args.gen_dir}", file=sys.stderr)
        return 1
    entries = load_manifest(args.ref_manifest)
    failures = 0
    generated = []
    for i, path in enumerate(gen_paths):
        try:
            generated.append(_cloud_from_mesh(
                load_mesh(path), cfg.metric_points,
                _shape_seed(args.seed, os.path.basename(path), 0)))
        except Exception as exc:
            failures += 1
            print(f"eval-gen: skipping {path}: {exc}", file=sys.stderr)
    reference = []
    for entry in entries:
        try:
            mesh = normalize_to_unit_cube(load_mesh(entry.mesh), margin=0.05)
            reference.append(_cloud_from_mesh(
                mesh, cfg.metric_points, _shape_seed(args.seed, entry.id, 1)))
        except Exception as exc:
            failures += 1
            print(f"eval-gen: skipping reference {entry.id}: {exc}",
                  file=sys.stderr)
    if not generated or not reference:
        print("eval-gen: nothing to compare", file=sys.stderr)
        return 1
    metrics = set_metrics(generated, reference, distance="chamfer")
    out_dir = os.path.dirname(os.path.abspath(args.out_csv))
    os.makedirs(out_dir, exist_ok=True)
    write_effective_config(cfg, out_dir)
    _write_csv(args.out_csv,
               ["distance", "coverage", "mmd", "one_nna", "num_generated",
                "num_reference", "metric_points", "seed"],
               [[metrics.distance_kind, f"{metrics.coverage:.6g}",
                 f"{metrics.mmd:.6g}", f"{metrics.one_nna:.6g}",
                 metrics.num_generated, metrics.num_reference,
                 cfg.metric_points, args.seed]])
    from .report import render_metrics_figure
    render_metrics_figure(metrics, os.path.splitext(args.out_csv)[0] + ".png")
    print(f"eval-gen: COV {metrics.coverage:.1%}, MMD {metrics.mmd:.4g}, "
          f"1-NNA {metrics.one_nna:.1%} -> {args.out_csv}")
    return 1 if failures else 0


# --- inspect -------------------------------------------------------------------

def cmd_inspect(args, cfg: RunConfig) -> int:
    bank, stats = load_bank(args.path, with_stats=True)
    s = bank.scales
    info = {
        "path": args.path,
        "grids": bank.n,
        "grid_resolution": bank.k,
        "parameters": bank.param_count,
        "scale_min": float(s.min()),
        "scale_median": float(np.median(s)),
        "scale_max": float(s.max()),
        "value_range": [float(bank.values.min()), float(bank.values.max())],
        "channel_stats": None if stats is None else {
            "p_mean": [float(v) for v in stats.p_mean],
            "p_scale": float(stats.p_scale),
            "s_mean": float(stats.s_mean),
            "s_scale": float(stats.s_scale)},
        "file_bytes": os.path.getsize(args.path),
    }
    print(json.dumps(info, indent=2))
    return 0


# --- parser --------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=VALUE config file")
    common.add_argument("--seed", type=int, default=0, help="global seed")
    common.add_argument("--workers", type=int, default=1,
                        help="parallel shape workers (fit)")
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="msdf", description="local-grid SDF fitting and generation")
    parser.add_argument("--version", action="version",
                        version=f"msdf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common],
                       help="fit grid banks for every manifest shape")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("bench-rep", parents=[common],
                       help="budget sweep across representations")
    p.add_argument("manifest")
    p.add_argument("budgets", help="comma-separated parameter budgets")
    p.add_argument("out_csv")
    p.set_defaults(fn=cmd_bench_rep)

    p = sub.add_parser("extract", parents=[common],
                       help="extract meshes from .msdf files")
    p.add_argument("input", help=".msdf file or directory")
    p.add_argument("out", help="output .obj path or directory")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("fm-train", parents=[common],
                       help="train the set velocity model on fitted banks")
    p.add_argument("msdf_dir")
    p.add_argument("manifest")
    p.add_argument("out_ckpt")
    p.set_defaults(fn=cmd_fm_train)

    p = sub.add_parser("fm-sample", parents=[common],
                       help="sample shapes from a checkpoint")
    p.add_argument("ckpt")
    p.add_argument("--class", dest="class_id", type=int, required=True)
    p.add_argument("--omega", default="0",
                   help="guidance scale, comma list emits one directory per value")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--raw-weights", action="store_true",
                   help="use raw weights instead of the EMA")
    p.set_defaults(fn=cmd_fm_sample)

    p = sub.add_parser("eval-gen", parents=[common],
                       help="distribution metrics of generated vs reference meshes")
    p.add_argument("gen_dir")
    p.add_argument("ref_manifest")
    p.add_argument("out_csv")
    p.set_defaults(fn=cmd_eval_gen)

    p = sub.add_parser("inspect", parents=[common],
                       help="summarize a .msdf file")
    p.add_argument("path")
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    cap = os.environ.get("MSDF_NUM_THREADS")
    if cap:
        try:
            set_thread_cap(int(cap))
        except ValueError:
            print(f"bad MSDF_NUM_THREADS: {cap!r}", file=sys.stderr)
            return 2
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg.seed = args.seed
        return args.fn(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
