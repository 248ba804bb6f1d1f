"""Command-line surface: data generation, training, evaluation, sweeps.

Exit codes: 0 success, 1 runtime failure (solver breakdown, I/O), 2 bad
configuration.  Run settings come from a flat key=value file (see config);
sweep structure comes from flags so one config serves many runs.
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import losses as ls
from . import metrics
from . import networks as nets
from . import training as tr
from .config import Config
from .dataforge import cases
from .errors import ConfigError, SolverError
from .measurements import MeasurementSet

log = logging.getLogger("topinn")

# preset fallback per problem family (finite-strain shares the matrix one)
_FAMILY_PRESET = {"matrix": "matrix", "matrix-hyper": "matrix", "mit": "mit",
                  "layer": "layer", "thermal": "thermal"}


def _load_case_dir(cfg):
    case_dir = cfg.get("case.dir")
    case_path = os.path.join(case_dir, "case.txt")
    case = cases.load_case(case_path)
    if case["data"] == "unavailable":
        raise ConfigError(f"{case_path}: forward data marked unavailable")
    mpath = os.path.join(case_dir, "measurements.csv")
    if not os.path.exists(mpath):
        raise ConfigError(f"missing measurement file: {mpath}")
    mset = MeasurementSet.load_csv(mpath)
    return case_dir, case, mset


def _resolve_preset(cfg, family):
    name = cfg.get("train.preset", str, _FAMILY_PRESET[family])
    if name not in tr.PRESETS:
        raise ConfigError(f"unknown train.preset '{name}' "
                          f"(have: {', '.join(sorted(tr.PRESETS))})")
    return tr.PRESETS[name]


def _build_bundle(cfg, case, seed):
    preset = _resolve_preset(cfg, case["family"])
    hidden = cfg.get_list("net.hidden", int, tuple(preset["hidden"]))
    phi_hidden = cfg.get_list("net.phi_hidden", int, None)
    omega0 = cfg.get("net.omega0", float, 10.0)
    delta = cfg.get("net.delta", float, 0.01)
    return nets.FieldBundle.create(
        case["family"], hidden, omega0, seed, P_o=case["P_o"], delta=delta,
        missing_side=case.get("missing_side", "none"),
        phi_hidden=phi_hidden)


def _build_collocation(cfg, case, seed):
    preset = _resolve_preset(cfg, case["family"])
    n = cfg.get("train.collocation", int, preset["n_colloc"])
    nb = cfg.get("train.batches", int, preset["n_batches"])
    return tr.lhs_sample(nets.FAMILY_DOMAIN[case["family"]], n, seed, nb)


def _build_weights(cfg):
    return ls.LossWeights(
        lambda_meas=cfg.get("loss.lambda_meas", float, 10.0),
        lambda_gov=cfg.get("loss.lambda_gov", float, 1.0),
        lambda_reg=cfg.get("loss.lambda_reg", float, 1.0),
        lambda_cr=cfg.get("loss.lambda_cr", float, 10.0),
        regularizer=cfg.get("loss.regularizer", str, "eikonal"),
        simp_p=cfg.get("loss.p", int, 3))


def _build_schedule(cfg, case):
    preset = _resolve_preset(cfg, case["family"])
    return tr.Schedule(
        cfg.get("train.epochs", int, preset["epochs"]),
        drops=cfg.get_drops("train.drops", tuple(preset["drops"])),
        alpha_psi0=cfg.get("train.alpha_psi0", float, 1e-3),
        alpha_phi0=cfg.get("train.alpha_phi0", float, 1e-4))


def _write_pretrain_csv(path, history):
    with open(path, "w") as f:
        f.write("epoch,mean_abs_mismatch\n")
        for e, v in enumerate(history, start=1):
            f.write("%d,%r\n" % (e, float(v)))


def _truth_raster(case_dir):
    p = os.path.join(case_dir, "truth.csv")
    if not os.path.exists(p):
        return None
    return metrics.read_raster_csv(p)


def _self_iou(bundle, truth):
    resolution = min(truth.shape)
    rho, _, _ = metrics.density_rasters(bundle, resolution=resolution)
    if rho.shape != truth.shape:
        raise ConfigError(
            f"raster shapes differ: run {rho.shape} vs truth {truth.shape}")
    return metrics.iou(rho, truth)


def train_pipeline(cfg, resume=False):
    """Pretrain + main run + export + evaluation for one configuration.

    Returns the eval dict written to <train.out>/eval.json.
    """
    t0 = time.time()
    case_dir, case, mset = _load_case_dir(cfg)
    seed = cfg.get("train.seed", int, 0)
    out = cfg.get("train.out")
    os.makedirs(out, exist_ok=True)
    cfg.write(os.path.join(out, "run_config.txt"))

    bundle = _build_bundle(cfg, case, seed)
    colloc = _build_collocation(cfg, case, seed)
    weights = _build_weights(cfg)
    schedule = _build_schedule(cfg, case)

    if not resume:
        p_epochs = cfg.get("train.pretrain_epochs", int, 800)
        p_lr = cfg.get("train.pretrain_lr", float, 1e-3)
        hist = tr.pretrain_levelset(bundle, colloc, epochs=p_epochs, lr=p_lr)
        _write_pretrain_csv(os.path.join(out, "pretrain_loss.csv"), hist)
        log.info("pretraining done: mean abs mismatch %.4f", hist[-1])

    history = tr.train_run(
        out, bundle, colloc, mset, case["material"], weights, schedule,
        checkpoint_every=cfg.get("train.checkpoint_every", int, 5000),
        resume=resume,
        log_every=cfg.get("train.log_every", int, 1000))

    metrics.export_density(bundle, os.path.join(out, "fields"),
                           resolution=cfg.get("train.eval_resolution", int, 512))

    truth = _truth_raster(case_dir)
    score = None if truth is None else _self_iou(bundle, truth)
    last = history[-1]
    report = metrics.EvalReport(
        iou=score,
        final={"loss_meas": last[1], "loss_gov": last[2],
               "loss_reg": last[3], "total": last[4]},
        runtime={"seconds": time.time() - t0,
                 "epochs": int(last[0])},
        extra={"case": case["name"], "family": case["family"],
               "regularizer": weights.regularizer,
               "value": weights.simp_p if weights.regularizer == "simp"
               else weights.lambda_reg,
               "seed": seed})
    with open(os.path.join(out, "eval.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    return report.to_dict()


def cmd_generate_data(args):
    cfg = Config.from_file(args.config)
    name = cfg.get("case.name")
    out = cfg.get("case.out")
    os.makedirs(out, exist_ok=True)
    cases.generate_case(
        name, out,
        density=cfg.get("case.density", int, 200),
        noise=cfg.get("case.noise", float, 0.0),
        seed=cfg.get("case.seed", int, 0),
        resolution=cfg.get("case.resolution", int, 512),
        per_side=cfg.get("case.per_side", int, 100))
    status = cases.load_case(os.path.join(out, "case.txt"))["data"]
    print(f"generate-data: {name} -> {out} (data: {status})")
    return 0 if status != "unavailable" else 1


def cmd_pretrain(args):
    cfg = Config.from_file(args.config)
    _, case, _ = _load_case_dir(cfg)
    seed = cfg.get("train.seed", int, 0)
    out = cfg.get("train.out")
    os.makedirs(out, exist_ok=True)
    bundle = _build_bundle(cfg, case, seed)
    colloc = _build_collocation(cfg, case, seed)
    hist = tr.pretrain_levelset(
        bundle, colloc,
        epochs=cfg.get("train.pretrain_epochs", int, 800),
        lr=cfg.get("train.pretrain_lr", float, 1e-3))
    _write_pretrain_csv(os.path.join(out, "pretrain_loss.csv"), hist)
    tr.save_checkpoint(os.path.join(out, "pretrain"), bundle,
                       tr.Adam(bundle.psi.theta.size),
                       tr.Adam(bundle.phi.theta.size), 0)
    print(f"pretrain: mean abs mismatch {hist[-1]:.6f} -> {out}")
    return 0


def cmd_train(args):
    cfg = Config.from_file(args.config)
    report = train_pipeline(cfg, resume=args.resume)
    score = "n/a" if report["iou"] is None else f"{report['iou']:.4f}"
    print(f"train: total {report['final']['total']:.3e} iou {score} "
          f"-> {cfg.get('train.out')}")
    return 0


def _rho_raster_of(path, truth_shape):
    """Density raster for an eval target: raster CSV or run directory."""
    if os.path.isfile(path):
        return metrics.read_raster_csv(path)
    run_cfg = os.path.join(path, "run_config.txt")
    final = os.path.join(path, "final")
    if not os.path.isdir(final):
        final = tr._latest_checkpoint(os.path.join(path, "checkpoints"))
        if final is None:
            raise ConfigError(f"{path}: no final/ or checkpoints/ to evaluate")
    cfg = Config.from_file(run_cfg)
    _, case, _ = _load_case_dir(cfg)
    bundle = _build_bundle(cfg, case, cfg.get("train.seed", int, 0))
    tr.load_checkpoint(final, bundle)
    rho, _, _ = metrics.density_rasters(bundle, resolution=min(truth_shape))
    return rho


def cmd_evaluate(args):
    truth_path = args.truth
    if os.path.isdir(truth_path):
        truth_path = os.path.join(truth_path, "truth.csv")
    truth = metrics.read_raster_csv(truth_path)
    rho = _rho_raster_of(args.run, truth.shape)
    score = metrics.iou(rho, truth)

    final = {}
    if os.path.isdir(args.run):
        loss_csv = os.path.join(args.run, "loss.csv")
        if os.path.exists(loss_csv):
            last = tr.read_history_csv(loss_csv)[-1]
            final = {"loss_meas": last[1], "loss_gov": last[2],
                     "loss_reg": last[3], "total": last[4]}
    report = metrics.EvalReport(iou=score, final=final)
    payload = json.dumps(report.to_dict(), indent=1, sort_keys=True)
    if os.path.isdir(args.run):
        with open(os.path.join(args.run, "eval.json"), "w") as f:
            f.write(payload + "\n")
    print(payload)
    return 0


def _sweep_values(reg, args):
    if reg == "simp":
        return [int(v) for v in args.p.split(",") if v.strip()]
    return [float(v) for v in args.weights.split(",") if v.strip()]


def _fmt_value(v):
    return f"{v:g}"


def _collect_sweep(out_dir):
    rows = []
    for name in sorted(os.listdir(out_dir)):
        p = os.path.join(out_dir, name, "eval.json")
        if not os.path.exists(p):
            continue
        with open(p) as f:
            d = json.load(f)
        rows.append((d["regularizer"], d["value"], d["seed"],
                     d["iou"], d["final"]["total"]))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows


def cmd_compare_regularizers(args):
    cfg = Config.from_file(args.config)
    out_dir = args.out or os.path.join(cfg.get("train.out"), "sweep")
    os.makedirs(out_dir, exist_ok=True)
    regs = [r.strip() for r in args.regularizers.split(",") if r.strip()]
    for reg in regs:
        if reg not in ls.REGULARIZERS:
            raise ConfigError(f"unknown regularizer '{reg}'; choose from "
                              f"{', '.join(ls.REGULARIZERS)}")
        for value in _sweep_values(reg, args):
            for seed in range(args.seeds):
                sub = os.path.join(out_dir,
                                   f"{reg}_{_fmt_value(value)}_s{seed}")
                if os.path.exists(os.path.join(sub, "eval.json")):
                    log.info("sweep: %s already done", sub)
                    continue
                run = (cfg.override("loss.regularizer", reg)
                       .override("train.seed", seed)
                       .override("train.out", sub))
                run = (run.override("loss.p", value) if reg == "simp"
                       else run.override("loss.lambda_reg", value))
                log.info("sweep: running %s", sub)
                train_pipeline(run)

    rows = _collect_sweep(out_dir)
    table = os.path.join(out_dir, "sweep.csv")
    with open(table, "w") as f:
        f.write("regularizer,value,seed,iou,final_total\n")
        for reg, value, seed, score, total in rows:
            s = "" if score is None else repr(float(score))
            f.write(f"{reg},{_fmt_value(value)},{seed},{s},{total!r}\n")
    for reg, value, seed, score, total in rows:
        s = "n/a" if score is None else f"{score:.4f}"
        print(f"{reg} value={_fmt_value(value)} seed={seed} iou={s}")
    print(f"compare-regularizers: {len(rows)} rows -> {table}")
    return 0


def _parser():
    p = argparse.ArgumentParser(
        prog="topinn",
        description="Hidden-geometry detection from boundary measurements.")
    p.add_argument("-v", "--verbose", action="store_true",
                   help="progress logging to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="solve a benchmark forward "
                       "problem and write case + measurement files")
    g.add_argument("config", help="case config (key=value)")
    g.set_defaults(fn=cmd_generate_data)

    q = sub.add_parser("pretrain", help="fit the level set to the initial "
                       "guess and save the checkpoint")
    q.add_argument("config", help="run config (key=value)")
    q.set_defaults(fn=cmd_pretrain)

    t = sub.add_parser("train", help="full optimization run with artifacts")
    t.add_argument("config", help="run config (key=value)")
    t.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("evaluate", help="intersection-over-union of a run "
                       "(or raster) against a truth raster")
    e.add_argument("run", help="run directory or density raster CSV")
    e.add_argument("truth", help="truth raster CSV or case directory")
    e.set_defaults(fn=cmd_evaluate)

    c = sub.add_parser("compare-regularizers",
                       help="sweep regularizer settings over seeds")
    c.add_argument("config", help="run config used as the base")
    c.add_argument("--regularizers", default="eikonal,tvd,penalization,simp")
    c.add_argument("--weights", default="0.01,0.1,1,10",
                   help="comma list of regularizer weights")
    c.add_argument("--p", default="1,3,5",
                   help="comma list of density exponents for simp")
    c.add_argument("--seeds", type=int, default=4,
                   help="number of restarts per setting")
    c.add_argument("--out", default=None,
                   help="sweep directory (default <train.out>/sweep)")
    c.set_defaults(fn=cmd_compare_regularizers)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (SolverError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
