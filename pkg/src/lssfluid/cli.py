"""Command-line entry point.

Commands: gen, train, rollout, eval, export-latent, bench, gradcheck.
Every command echoes one `config:` line with its fully resolved settings
(defaults and seed included) so any run can be reproduced from its log.
Report-writing commands render a companion PNG figure next to the CSV.
Exit code classes: usage 2, io 3, contract 4, solver 5, training 6.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ContractViolation, FormatError, SolverFailure, TrainingError

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONTRACT = 4
EXIT_SOLVER = 5
EXIT_TRAINING = 6


def _env_seed() -> int:
    raw = os.environ.get("LSS_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        return 0


def _echo_config(cmd: str, args: argparse.Namespace) -> None:
    skip = {"func"}
    pairs = [f"{k.replace('_', '-')}={v}" for k, v in sorted(vars(args).items())
             if k not in skip]
    print(f"config: cmd={cmd} " + " ".join(pairs))


def _parse_res(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise ContractViolation(f"bad --res '{text}', expected WxH") from exc


def _parse_scene_ref(text: str) -> tuple[str, int]:
    if "#" in text:
        path, _, idx = text.rpartition("#")
        try:
            return path, int(idx)
        except ValueError as exc:
            raise ContractViolation(f"bad scene index in '{text}'") from exc
    return text, 0


def _parse_mutators(specs: list[str]):
    from .rollout import AddInflow, AddSink, InsertObstacle
    out = []
    for spec in specs or []:
        kind, _, rest = spec.partition(":")
        try:
            nums = [float(x) for x in rest.split(",")]
        except ValueError as exc:
            raise ContractViolation(f"bad mutator '{spec}'") from exc
        if kind == "obstacle" and len(nums) == 3:
            out.append(InsertObstacle((nums[0], nums[1]), nums[2]))
        elif kind == "inflow" and len(nums) == 3:
            out.append(AddInflow((nums[0], nums[1]), nums[2]))
        elif kind == "sink" and len(nums) == 4:
            out.append(AddSink((nums[0], nums[1], nums[2], nums[3])))
        else:
            raise ContractViolation(
                f"bad mutator '{spec}' (obstacle:x,y,r | inflow:x,y,r | sink:x0,y0,x1,y1)")
    return tuple(out)


def _set_jobs(jobs: int) -> None:
    import torch
    torch.set_num_threads(max(1, jobs))


def _require_exists(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    from .dataset import write_dataset
    from .figures import render_scene_montage
    from .scenes import SceneKind, generate_scene

    kind = SceneKind(args.scene)
    width, height = _parse_res(args.res)
    seeds = [args.seed + k for k in range(args.scenes)]
    if args.jobs > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(args.jobs) as pool:
            sequences = pool.starmap(
                generate_scene,
                [(kind, width, height, args.frames, s) for s in seeds])
    else:
        sequences = [generate_scene(kind, width, height, args.frames, s)
                     for s in seeds]
    manifest = write_dataset(args.out, sequences)
    render_scene_montage(Path(args.out).with_suffix(".png"), sequences[0].frames)
    print(f"wrote {args.scenes} scenes x {args.frames} frames at {width}x{height} "
          f"to {args.out} (max|u|={manifest.max_abs_u:.4g})")
    return 0


def cmd_train(args) -> int:
    import torch

    from .checkpoint import save_checkpoint
    from .dataset import read_dataset
    from .figures import render_trace_figure
    from .losses import LossWeights
    from .training import TrainConfig, fit, write_trace_csv, write_val_trace_csv

    sequences = read_dataset(_require_exists(args.data))
    cfg = TrainConfig(
        window=args.window, n_i=args.ni, batch_size=args.batch, lr=args.lr,
        epochs=args.epochs, seed=args.seed, latent_dim=args.latent,
        split_fraction=args.split, val_fraction=args.val_fraction,
        windows_per_epoch=args.windows_per_epoch,
        enc_layers=args.enc_layers, dec_layers=args.dec_layers,
        base_channels=args.base_channels, channel_cap=args.channel_cap,
        weights=LossWeights(),
    )
    last = {"step": 0}

    def progress(step, report):
        last["step"] = step
        if args.log_every and step % args.log_every == 0:
            print(f"step {step}: total={report.total:.5f} "
                  f"ae={report.ae_direct:.5f} pred={report.ae_pred:.5f}", flush=True)

    result = fit(sequences, cfg, progress=progress)
    save_checkpoint(args.out, result.checkpoint)
    trace_path = args.trace or str(Path(args.out).with_suffix(".trace.csv"))
    write_trace_csv(trace_path, result.trace)
    write_val_trace_csv(str(trace_path) + ".val.csv", result.val_trace)
    render_trace_figure(Path(trace_path).with_suffix(".png"), result.trace,
                        result.val_trace)
    best_val = min((v for _, v in result.val_trace), default=float("nan"))
    print(f"trained {last['step']} steps on scenes {result.train_scenes} "
          f"(val scenes {result.val_scenes}); best val {best_val:.5f}; "
          f"checkpoint -> {args.out}")
    return 0


def _load_ckpt(path):
    from .checkpoint import load_checkpoint
    return load_checkpoint(_require_exists(path))


def cmd_rollout(args) -> int:
    from .dataset import read_dataset
    from .figures import figure_path, render_rollout_figure, write_pgm
    from .rollout import rollout_vel, rollout_velden

    data_path, index = _parse_scene_ref(args.scene)
    scenes = read_dataset(_require_exists(data_path))
    if not 0 <= index < len(scenes):
        raise ContractViolation(f"scene index {index} out of range (have {len(scenes)})")
    scene = scenes[index]
    ckpt = _load_ckpt(args.ckpt)
    mutators = _parse_mutators(args.mutate)
    if args.mode == "vel":
        result = rollout_vel(ckpt, scene, args.steps, mutators=mutators)
    else:
        if mutators:
            raise ContractViolation("mutators require --mode vel (density reinjection)")
        result = rollout_velden(ckpt, scene, args.steps)

    rows = list(zip(range(len(result.psnr_u)), result.psnr_u, result.psnr_rho))
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write("scene,mode,step,psnr_u,psnr_rho\n")
        for step, pu, pr in rows:
            fh.write(f"{index},{result.mode},{step},{pu!r},{pr!r}\n")
        if rows:
            mu, mr = result.mean_psnr()
            fh.write(f"# summary scene={index} mode={result.mode} steps={len(rows)} "
                     f"mean_psnr_u={mu!r} mean_psnr_rho={mr!r}\n")
    density = [f.data[..., 2] for f in result.fields]
    render_rollout_figure(figure_path(args.report), [r[0] for r in rows],
                          result.psnr_u, result.psnr_rho, result.mode, density)
    if args.dump_pgm:
        out_dir = Path(args.dump_pgm)
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, frame in enumerate(result.fields):
            write_pgm(out_dir / f"density_{k:05d}.pgm", frame.data[..., 2])
    if rows:
        mu, mr = result.mean_psnr()
        print(f"rollout {result.mode} scene {index}: {len(result.fields)} steps, "
              f"mean PSNR u={mu:.2f} dB rho={mr:.2f} dB -> {args.report}")
    else:
        print(f"rollout {result.mode} scene {index}: {len(result.fields)} steps "
              f"(no ground truth overlap) -> {args.report}")
    return 0


def cmd_eval(args) -> int:
    from .dataset import read_dataset
    from .figures import figure_path, render_eval_figure
    from .rollout import evaluate

    scenes = read_dataset(_require_exists(args.data))
    ckpt = _load_ckpt(args.ckpt)
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    horizons = tuple(int(h) for h in args.horizons.split(",") if h.strip())
    report = evaluate(ckpt, scenes, modes, horizons)
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write("scene,mode,horizon,mean_psnr_u,mean_psnr_rho\n")
        for r in report.rows:
            fh.write(f"{r.scene},{r.mode},{r.horizon},{r.mean_psnr_u!r},"
                     f"{r.mean_psnr_rho!r}\n")
        for mode in modes:
            for h in horizons:
                mu, mr = report.mean(mode, h)
                fh.write(f"# summary mode={mode} horizon={h} mean_psnr_u={mu!r} "
                         f"mean_psnr_rho={mr!r}\n")
    render_eval_figure(figure_path(args.report), report.rows)
    for mode in modes:
        for h in horizons:
            mu, mr = report.mean(mode, h)
            print(f"{mode}@{h}: mean PSNR u={mu:.2f} dB rho={mr:.2f} dB")
    print(f"report -> {args.report}")
    return 0


def cmd_export_latent(args) -> int:
    from .dataset import read_dataset
    from .figures import figure_path, render_latent_figure
    from .rollout import export_latent_trajectories

    scenes = read_dataset(_require_exists(args.data))
    ckpt = _load_ckpt(args.ckpt)
    rows, degenerate = export_latent_trajectories(ckpt, scenes)
    if degenerate:
        print("warning: zero-variance latent set, exported all-zero components",
              file=sys.stderr)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("scene,frame,p1,p2,p3\n")
        for scene, frame, p1, p2, p3 in rows:
            fh.write(f"{scene},{frame},{p1!r},{p2!r},{p3!r}\n")
    render_latent_figure(figure_path(args.out), rows)
    print(f"exported {len(rows)} latent points -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .dataset import read_dataset
    from .figures import figure_path, render_bench_figure
    from .rollout import bench_timing

    scenes = read_dataset(_require_exists(args.data))[: args.scenes]
    ckpt = _load_ckpt(args.ckpt)
    rows = bench_timing(ckpt, scenes, args.steps)
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write("scene,kind,steps,solve_s,total_s\n")
        for r in rows:
            fh.write(f"{r.scene},{r.kind},{r.steps},{r.solve_s!r},{r.total_s!r}\n")
        for kind in ("simulation", "prediction"):
            sel = [r for r in rows if r.kind == kind]
            fh.write(f"# summary kind={kind} mean_solve_s="
                     f"{float(np.mean([r.solve_s for r in sel]))!r} mean_total_s="
                     f"{float(np.mean([r.total_s for r in sel]))!r}\n")
    render_bench_figure(figure_path(args.report), rows)
    for kind in ("simulation", "prediction"):
        sel = [r for r in rows if r.kind == kind]
        print(f"{kind}: mean solve {np.mean([r.solve_s for r in sel]) * 1e3:.1f} ms, "
              f"mean total {np.mean([r.total_s for r in sel]) * 1e3:.1f} ms per step")
    print(f"report -> {args.report}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_gradient_checks

    results = run_gradient_checks(seed=args.seed)
    worst = 0.0
    for name, err in results:
        print(f"{name:24s} max rel err {err:.3e}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return 0 if worst <= TOLERANCE else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lss",
        description="Subdivided-latent neural surrogates for 2D smoke flows")
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = _env_seed()

    def add_common(p):
        p.add_argument("--seed", type=int, default=seed_default,
                       help="run seed (falls back to LSS_SEED, then 0)")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker/thread count (1 = single-context mode)")

    p = sub.add_parser("gen", help="generate a scene dataset")
    p.add_argument("--scene", required=True,
                   choices=["moving-smoke", "rot-cup", "rot-mov-cup"])
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--frames", type=int, default=128)
    p.add_argument("--res", default="32x64", help="WxH, e.g. 32x64")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train encoder/decoder/predictor end to end")
    p.add_argument("--data", required=True)
    p.add_argument("--latent", type=int, default=16, choices=[16, 32, 48])
    p.add_argument("--split", type=float, default=0.66,
                   choices=[0.0, 0.33, 0.5, 0.66])
    p.add_argument("--ni", type=int, default=6, choices=[0, 1, 6, 12],
                   help="internal predictor iterations (0 = direct-loss-only AE)")
    p.add_argument("--window", type=int, default=2, choices=[2, 3, 4])
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--windows-per-epoch", type=int, default=None)
    p.add_argument("--enc-layers", type=int, default=8)
    p.add_argument("--dec-layers", type=int, default=9)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--channel-cap", type=int, default=48)
    p.add_argument("--trace", default=None, help="loss trace CSV path")
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="roll out a checkpoint on one scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mode", required=True, choices=["vel", "velden"])
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--scene", required=True, help="dataset path, optionally #index")
    p.add_argument("--mutate", action="append", default=[],
                   help="obstacle:x,y,r | inflow:x,y,r | sink:x0,y0,x1,y1")
    p.add_argument("--dump-pgm", default=None, help="directory for density PGMs")
    p.add_argument("--report", required=True)
    add_common(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="aggregate PSNR over a held-out dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--modes", default="velden,vel")
    p.add_argument("--horizons", default="100,400")
    p.add_argument("--report", required=True)
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-latent", help="PCA-project encoded trajectories")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_export_latent)

    p = sub.add_parser("bench", help="time solver steps vs prediction steps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--scenes", type=int, default=5)
    p.add_argument("--report", required=True)
    add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _echo_config(args.command, args)
    try:
        _set_jobs(args.jobs)
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError, FormatError) as exc:
        print(f"error: class=io {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractViolation as exc:
        print(f"error: class=contract {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except SolverFailure as exc:
        print(f"error: class=solver {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TrainingError as exc:
        print(f"error: class=training {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
