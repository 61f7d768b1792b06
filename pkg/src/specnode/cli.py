"""Command-line front end: reference, train, evaluate, extrapolate, bench."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import ConfigError, PRESETS, RunConfig, load_config, preset
from .fields import load_checkpoint, save_checkpoint
from .integrate import StabilityReport, stability_bound
from .reference import (
    IndeterminateOrderError,
    InstabilityError,
    ReferenceSolution,
    convergence_order,
    read_binary,
    solve_reference,
    write_binary,
    write_csv,
)
from .training import DivergenceError, SpectralNODE, build_model, roi_metrics, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_UNSTABLE = 4


class UnstableError(RuntimeError):
    pass


def _stamp(cfg: RunConfig) -> dict:
    return {"config": cfg.config_hash(), "seed": cfg.seed}


def _path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def check_stability(cfg: RunConfig, allow_unstable: bool = False) -> StabilityReport:
    """RK4 stability of the model's linear part at the training step."""
    spec = cfg.problem_spec()
    basis = spec.basis(cfg.modes)
    rep = stability_bound(spec.multiplier(basis), cfg.h, second_order=spec.wiring == "second_order")
    if not rep.stable:
        msg = (f"h={cfg.h:.4g} is outside the RK4 stability region (max |lambda h| = "
               f"{rep.max_abs_lambda_h:.3f}, worst mode {rep.worst_mode})")
        if not allow_unstable:
            raise UnstableError(msg)
        print(f"warning: {msg}", file=sys.stderr)
    return rep


# ------------------------------------------------------------- commands


def cmd_reference(cfg: RunConfig) -> dict:
    """Ground truth on the evaluation grid over ``[0, T * extrapolate]``.

    The reference solver always refuses an unstable step; ``--allow-unstable``
    only relaxes the model-side check.
    """
    spec = cfg.problem_spec()
    os.makedirs(cfg.out_dir, exist_ok=True)
    axes = cfg.eval_axes(spec)
    sol = solve_reference(spec, cfg.ref_dt, cfg.ref_modes, eval_axes=axes, out_step=cfg.h,
                          t_end=cfg.h * round((cfg.t_samples - 1) * cfg.extrapolate))
    # temporal order over a short window keeps the check cheap
    window = cfg.h * max(1, (cfg.t_samples - 1) // 8)
    try:
        order = convergence_order(spec, sol.dt, cfg.ref_modes, t_end=window)
        order_info = {"order": order.order, "ratio": order.ratio, "errors": list(order.errors),
                      "window": window}
    except IndeterminateOrderError as exc:
        order_info = {"order": None, "note": str(exc), "window": window}
    sol.meta["convergence"] = order_info
    extra = _stamp(cfg)
    paths = {"csv": _path(cfg, "reference.csv"), "bin": _path(cfg, "reference.bin"),
             "meta": _path(cfg, "reference.json")}
    write_csv(paths["csv"], sol, extra, precision=cfg.precision)
    write_binary(paths["bin"], sol, extra)
    _write_json(paths["meta"], {**extra, "problem": spec.name, "dt": sol.dt, "dx": list(sol.dx),
                                "times": len(sol.times), "meta": sol.meta})
    return paths


def _load_reference(cfg: RunConfig) -> ReferenceSolution | None:
    path = _path(cfg, "reference.bin")
    if not os.path.exists(path):
        return None
    sol, extra = read_binary(path)
    if extra.get("config") != cfg.config_hash():
        print(f"warning: {path} was made with config {extra.get('config')}, "
              f"not {cfg.config_hash()}", file=sys.stderr)
    return sol


def _metric_fn(cfg: RunConfig, ref: ReferenceSolution | None):
    if ref is None:
        return None
    if len(ref.times) < cfg.t_samples:
        raise ValueError("reference horizon is shorter than the training window")
    gt = ref.values[:cfg.t_samples]
    return lambda model: roi_metrics(model.predict(ref.axes), gt)


def _model(cfg: RunConfig) -> SpectralNODE:
    return build_model(cfg.problem_spec(), cfg.model_config(), np.random.default_rng(cfg.seed))


def write_history(path, history, cfg: RunConfig):
    lines = [f"# config={cfg.config_hash()} seed={cfg.seed}", "step,loss,rMAE,rMSE,wall_seconds"]
    for r in history:
        lines.append(",".join([str(r.step), repr(r.loss),
                               "" if r.rmae is None else repr(r.rmae),
                               "" if r.rmse is None else repr(r.rmse),
                               f"{r.wall_seconds:.3f}"]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_train(cfg: RunConfig, allow_unstable: bool = False, metrics: bool = True,
              log=None) -> dict:
    check_stability(cfg, allow_unstable)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ref = _load_reference(cfg) if metrics else None
    if metrics and ref is None:
        print("note: no reference found; training without metrics", file=sys.stderr)
    model = _model(cfg)
    ckpt = _path(cfg, "checkpoint.txt")
    try:
        result = train(model, cfg.steps, lr=cfg.lr, seed=cfg.seed,
                       metric_fn=_metric_fn(cfg, ref), metric_every=cfg.metric_every,
                       collocation=cfg.collocation, n_random_points=cfg.random_points or None,
                       log=log)
    except DivergenceError as exc:
        save_checkpoint(ckpt, exc.last_good, cfg.seed, cfg.config_hash())
        raise
    save_checkpoint(ckpt, model.named_parameters(), cfg.seed, cfg.config_hash())
    write_history(_path(cfg, "history.csv"), result.history, cfg)
    summary = {**_stamp(cfg), "problem": cfg.problem, "steps": cfg.steps,
               "final_loss": result.history[-1].loss}
    fm = result.final_metrics
    if fm is not None:
        summary.update(rMAE=fm.rmae, rMSE=fm.rmse)
    _write_json(_path(cfg, "train.json"), summary)
    return {"checkpoint": ckpt, "history": _path(cfg, "history.csv"),
            "summary": summary, "result": result}


def _restore(cfg: RunConfig, checkpoint: str | None) -> SpectralNODE:
    path = checkpoint or _path(cfg, "checkpoint.txt")
    arrays, _ = load_checkpoint(path)
    model = _model(cfg)
    model.load_arrays(arrays)
    return model


def snapshot_indices(n_nodes: int, count: int = 5) -> list:
    return sorted(set(int(round(i)) for i in np.linspace(0, n_nodes - 1, count)))


def cmd_evaluate(cfg: RunConfig, checkpoint: str | None = None,
                 allow_unstable: bool = False) -> dict:
    check_stability(cfg, allow_unstable)
    ref = _load_reference(cfg)
    if ref is None:
        raise FileNotFoundError("evaluate needs a reference solution; run `reference` first")
    model = _restore(cfg, checkpoint)
    pred = model.predict(ref.axes)
    gt = ref.values[:cfg.t_samples]
    m = roi_metrics(pred, gt)
    idx = snapshot_indices(cfg.t_samples)
    snap = ReferenceSolution(cfg.problem, model.grid.times[idx], ref.axes, pred[idx],
                             model.grid.h, ref.dx, {"source": "model", "snapshots": idx})
    write_csv(_path(cfg, "fields.csv"), snap, _stamp(cfg), precision=cfg.precision)
    out = {**_stamp(cfg), "rMAE": m.rmae, "rMSE": m.rmse}
    _write_json(_path(cfg, "metrics.json"), out)
    return out


def cmd_extrapolate(cfg: RunConfig, checkpoint: str | None = None,
                    horizon_multiplier: float | None = None, allow_unstable: bool = False) -> dict:
    check_stability(cfg, allow_unstable)
    mult = cfg.extrapolate if horizon_multiplier is None else float(horizon_multiplier)
    ref = _load_reference(cfg)
    if ref is None:
        raise FileNotFoundError("extrapolate needs a reference solution; run `reference` first")
    model = _restore(cfg, checkpoint)
    grid = model.grid.extended(mult)
    if len(ref.times) < grid.t_samples:
        raise ValueError(f"reference covers t <= {ref.times[-1]:.4g}, horizon needs {grid.T:.4g}")
    pred = model.predict(ref.axes, grid)
    gt = ref.values[:grid.t_samples]
    rows = []
    for i, t in enumerate(grid.times):
        m = roi_metrics(pred[i:i + 1], gt[i:i + 1])
        rows.append((float(t), m.rmae, m.rmse))
    path = _path(cfg, "extrapolation.csv")
    lines = [f"# config={cfg.config_hash()} seed={cfg.seed} horizon={mult!r}", "t,rMAE,rMSE"]
    lines += [f"{t!r},{a!r},{b!r}" for t, a, b in rows]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    overall = roi_metrics(pred, gt)
    return {"path": path, "rows": rows, "rMAE": overall.rmae, "rMSE": overall.rmse}


def cmd_bench(out_root: str = "runs/bench", seeds=(0, 1, 2), allow_unstable: bool = False) -> list:
    """Desk-scale suite over every preset; writes a summary table."""
    rows = []
    for name in sorted(PRESETS):
        base = preset(name, "desk").replace(out_dir=os.path.join(out_root, name))
        cmd_reference(base)
        for seed in seeds:
            cfg = base.replace(seed=seed, out_dir=os.path.join(out_root, name, f"seed{seed}"))
            os.makedirs(cfg.out_dir, exist_ok=True)
            for ext in ("bin",):
                src = _path(base, f"reference.{ext}")
                with open(src, "rb") as a, open(_path(cfg, f"reference.{ext}"), "wb") as b:
                    b.write(a.read())
            t0 = time.perf_counter()
            out = cmd_train(cfg, allow_unstable)
            rows.append((name, seed, out["summary"].get("rMAE"), out["summary"].get("rMSE"),
                         time.perf_counter() - t0))
    table = os.path.join(out_root, "table.csv")
    with open(table, "w", encoding="ascii", newline="\n") as fh:
        fh.write("problem,seed,rMAE,rMSE,train_seconds\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]!r},{r[3]!r},{r[4]:.1f}\n")
        for name in sorted(PRESETS):
            sel = [r for r in rows if r[0] == name]
            fh.write(f"{name},mean,{np.mean([r[2] for r in sel])!r},"
                     f"{np.mean([r[3] for r in sel])!r},{np.mean([r[4] for r in sel]):.1f}\n")
    return rows


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specnode", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("reference", "train", "evaluate", "extrapolate", "bench"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="INI run configuration")
        s.add_argument("--preset", default="sinegordon",
                       help=f"preset used without --config ({', '.join(sorted(PRESETS))})")
        s.add_argument("--scale", default="desk", help="preset scale: desk, full or tiny")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--allow-unstable", action="store_true")
        if name in ("evaluate", "extrapolate"):
            s.add_argument("--checkpoint")
        if name == "extrapolate":
            s.add_argument("--horizon", type=float, help="horizon multiplier (default from config)")
        if name == "train":
            s.add_argument("--no-metrics", action="store_true")
        if name == "bench":
            s.add_argument("--seeds", default="0,1,2")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else preset(args.preset, args.scale)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bench":
            seeds = tuple(int(s) for s in args.seeds.split(","))
            rows = cmd_bench(args.out or "runs/bench", seeds, args.allow_unstable)
            for r in rows:
                print(f"{r[0]:<12} seed={r[1]} rMAE={r[2]:.4e} rMSE={r[3]:.4e} ({r[4]:.0f}s)")
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "reference":
            paths = cmd_reference(cfg)
            print(f"reference written to {paths['csv']}")
        elif args.command == "train":
            def log(rep):
                if rep.rmse is not None:
                    print(f"step {rep.step:5d} loss {rep.loss:.4e} rMSE {rep.rmse:.4e}", flush=True)
            out = cmd_train(cfg, args.allow_unstable, metrics=not args.no_metrics, log=log)
            print(json.dumps(out["summary"], sort_keys=True))
        elif args.command == "evaluate":
            print(json.dumps(cmd_evaluate(cfg, args.checkpoint, args.allow_unstable), sort_keys=True))
        elif args.command == "extrapolate":
            out = cmd_extrapolate(cfg, args.checkpoint, args.horizon, args.allow_unstable)
            print(f"rMSE(t) written to {out['path']}; final rMSE {out['rows'][-1][2]:.4e}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}; last good checkpoint saved", file=sys.stderr)
        return EXIT_DIVERGED
    except (UnstableError, InstabilityError) as exc:
        print(f"error: {exc} (use --allow-unstable to proceed)", file=sys.stderr)
        return EXIT_UNSTABLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
