"""Command-line entry points: gen | train | eval | diagnose | bound | sweep | report.

Every command takes flags; sweep and bound additionally accept --config with
a TOML table whose keys match the flag names (flags win over the file).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import genmodel, harness, metrics
from .diagnostics import (BoundInputs, compute_bound_report, floored_step,
                          gamma_report)
from .genmodel import load_dataset, load_manifest, save_dataset, save_manifest
from .harness import ExperimentConfig, RunManifest
from .nn import forward_batch
from .train import (TrainConfig, extract_features, init_gcl_model, load_model,
                    save_model, train)


def _load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _config_value(args, toml_cfg: dict, name: str, default):
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in toml_cfg:
        return toml_cfg[name]
    return default


def cmd_gen(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.mode == "tcl":
        spec = genmodel.make_tcl_spec(args.d, args.t, args.seed,
                                      latent_law=args.latent_law,
                                      u_encoding=args.u_encoding)
    else:
        ranges = None
        if args.ranges:
            ranges = [float(v) for v in args.ranges.split(",")]
        spec = genmodel.make_mvcl_spec(args.d, args.seed,
                                       uniform_ranges=ranges,
                                       noise_scale=args.noise_scale)
    batch = genmodel.sample_dataset(spec, args.n, args.seed + 1)
    pairs = genmodel.make_contrastive_pairs(batch, args.seed + 2)
    data_path = os.path.join(args.out, "dataset.csv")
    manifest_path = os.path.join(args.out, "manifest.json")
    save_dataset(data_path, pairs)
    save_manifest(manifest_path, spec, args.seed, args.n)
    print(f"wrote {data_path} ({pairs.n} rows) and {manifest_path}")
    return 0


def cmd_train(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    batch = load_dataset(args.data)
    d = args.feature_dim
    if d is None:
        d = batch.s.shape[1] if batch.s is not None else batch.x.shape[1]
    cfg = TrainConfig(width=args.width, epochs=args.epochs,
                      batch_size=args.batch_size,
                      learning_rate=args.learning_rate, seed=args.seed)
    model = init_gcl_model(d, batch.u.shape[1], args.width, args.seed)
    train_part, holdout = harness._split_holdout(batch, args.holdout, args.seed)
    result = train(model, train_part, cfg, holdout=holdout)

    ckpt = os.path.join(args.out, "checkpoint.json")
    save_model(ckpt, result.model, rng_seed=args.seed,
               step_count=result.epochs_run)
    trace_path = os.path.join(args.out, "loss_trace.csv")
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,holdout_loss\n")
        for i, v in enumerate(result.loss_trace):
            hv = "" if result.holdout_trace is None else repr(
                result.holdout_trace[i])
            fh.write(f"{i},{v!r},{hv}\n")
    print(f"trained {result.epochs_run} epochs, final loss "
          f"{result.final_loss:.6f}; wrote {ckpt} and {trace_path}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    batch = load_dataset(args.data).positives()
    if batch.s is None:
        raise SystemExit("dataset has no ground-truth columns to evaluate against")
    feats = extract_features(model, batch.x)
    rep = metrics.mi_report(feats, batch.s, k=args.k, seed=args.seed)
    with open(args.checkpoint, encoding="utf-8") as fh:
        meta = json.load(fh)
    width = model.h.spec.layer_widths[1]
    out = {"seed": meta.get("rng_seed"), "N": batch.n, "R": width,
           **rep.to_dict()}
    payload = json.dumps(out, indent=1)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    print(payload)
    if args.csv:
        exists = os.path.exists(args.csv)
        with open(args.csv, "a", encoding="utf-8") as fh:
            if not exists:
                per = ",".join(f"mi_{i + 1}" for i in range(feats.shape[1]))
                fh.write(f"seed,N,R,mean_mi,{per}\n")
            per = ",".join(repr(float(v)) for v in rep.per_component_mi)
            fh.write(f"{out['seed']},{batch.n},{width},{rep.mean_mi!r},{per}\n")
    return 0


def cmd_diagnose(args) -> int:
    model = load_model(args.checkpoint)
    spec, _ = load_manifest(args.manifest)
    batch = load_dataset(args.data).positives()
    if batch.s is None:
        raise SystemExit("dataset has no ground-truth columns; cannot "
                         "evaluate the composed map")
    pts = batch.s[: args.points]
    scale = float(np.median(np.abs(pts))) or 1.0
    step = floored_step(args.step, scale)
    comp = lambda s: forward_batch(model.h, genmodel.mix(spec.mixing, s)[None, :])[0]
    rep = gamma_report(comp, pts, step=step)
    os.makedirs(args.out, exist_ok=True)
    json_path = os.path.join(args.out, "gamma.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(rep.to_dict(), fh, indent=1)
    csv_path = os.path.join(args.out, "gamma.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("point_index,j,k,gamma_norm\n")
        for pt, j, k, norm in rep.csv_rows():
            fh.write(f"{pt},{j},{k},{norm!r}\n")
    print(f"mean cross-derivative norm {rep.overall_mean_norm:.6g} over "
          f"{len(rep.point_indices)} points ({len(rep.skipped)} skipped); "
          f"wrote {json_path} and {csv_path}")
    return 0


def cmd_bound(args) -> int:
    toml_cfg = _load_toml(args.config) if args.config else {}
    norms = _config_value(args, toml_cfg, "layer_norms", "1,1")
    if isinstance(norms, str):
        norms = [float(v) for v in norms.split(",")]
    inputs = BoundInputs(
        c_x=float(_config_value(args, toml_cfg, "c_x", 1.0)),
        c_u=float(_config_value(args, toml_cfg, "c_u", 1.0)),
        layer_norms=tuple(float(b) for b in norms),
        d=int(_config_value(args, toml_cfg, "d", 2)),
        n=int(_config_value(args, toml_cfg, "n", 10000)),
        delta=float(_config_value(args, toml_cfg, "delta", 0.05)),
        nu=float(_config_value(args, toml_cfg, "nu", 0.0)),
        c_t=float(_config_value(args, toml_cfg, "c_t", 10.0)),
        sigma_star=float(_config_value(args, toml_cfg, "sigma_star", 1.0)),
    )
    report = compute_bound_report(inputs)
    payload = json.dumps(report.to_dict(), indent=1)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    print(payload)
    return 0


def cmd_sweep(args) -> int:
    toml_cfg = _load_toml(args.config) if args.config else {}

    def val(name, default):
        return _config_value(args, toml_cfg, name, default)

    def int_list(v):
        if isinstance(v, str):
            return tuple(int(p) for p in v.split(","))
        return tuple(int(p) for p in v)

    config = ExperimentConfig(
        mode=val("mode", "tcl"),
        d=int(val("d", 2)),
        t=int(val("t", 5)),
        n_list=int_list(val("n_list", (5000, 10000))),
        r_list=int_list(val("r_list", (4, 8, 16, 32, 64, 128, 256, 512))),
        trials=int(val("trials", 5)),
        base_seed=int(val("base_seed", 0)),
        output_dir=str(val("output_dir", "runs")),
        epochs=int(val("epochs", 60)),
        batch_size=int(val("batch_size", 256)),
        learning_rate=float(val("learning_rate", 5e-4)),
        holdout_fraction=float(val("holdout_fraction", 0.0)),
        mi_k=int(val("mi_k", 5)),
        gamma_points=int(val("gamma_points", 20)),
        gamma_step=float(val("gamma_step", 0.1)),
        eeg_path=val("eeg_path", None),
        eeg_feature_dim=int(val("eeg_feature_dim", 5)),
        workers=None if val("workers", None) is None else int(val("workers", 1)),
    )
    os.makedirs(config.output_dir, exist_ok=True)
    rows = harness.run_sweep(config)
    results_path = os.path.join(config.output_dir, "results.csv")
    harness.write_results_csv(results_path, rows)
    agg = harness.aggregate_rows(rows)
    agg_path = os.path.join(config.output_dir, "aggregate.csv")
    harness.write_aggregate_csv(agg_path, agg)
    artifacts = [("results", results_path), ("aggregate", agg_path)]
    if agg:  # nothing to chart when every cell failed
        svg_path = os.path.join(config.output_dir, "report.svg")
        md_path = os.path.join(config.output_dir, "report.md")
        harness.render_report(rows, svg_path, md_path)
        artifacts += [("report_svg", svg_path), ("report_md", md_path)]

    manifest = RunManifest(config={k: (list(v) if isinstance(v, tuple) else v)
                                   for k, v in vars(config).items()})
    for name, path in artifacts:
        manifest.add(name, path)
    manifest.save(os.path.join(config.output_dir, "manifest.json"))

    failures = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows) - len(failures)}/{len(rows)} cells ok; results in "
          f"{config.output_dir}")
    for r in failures:
        print(f"  failed: {r['mode']} N={r['N']} R={r['R']} trial={r['trial']}: "
              f"{r['status']}", file=sys.stderr)
    return 1 if failures else 0


def cmd_report(args) -> int:
    rows = harness.read_results_csv(args.results)
    harness.render_report(rows, args.out_svg, args.out_md,
                          metric=args.metric)
    print(f"wrote {args.out_svg} and {args.out_md}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nica",
                                description="contrastive nonlinear ICA toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic contrastive dataset")
    g.add_argument("--mode", choices=("tcl", "mvcl"), default="tcl")
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--t", type=int, default=5)
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--latent-law", choices=("gauss_laplace", "gaussian"),
                   default="gauss_laplace")
    g.add_argument("--u-encoding", choices=("onehot", "index"),
                   default="onehot")
    g.add_argument("--noise-scale", type=float, default=0.1)
    g.add_argument("--ranges", help="comma-separated uniform ranges (mvcl)")
    g.add_argument("--out", default="data")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the contrastive model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--width", type=int, default=64)
    t.add_argument("--feature-dim", type=int)
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--learning-rate", type=float, default=5e-4)
    t.add_argument("--holdout", type=float, default=0.1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="model")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="matched MI between features and sources")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--k", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.add_argument("--csv")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="cross-derivative report for a checkpoint")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--manifest", required=True)
    d.add_argument("--points", type=int, default=20)
    d.add_argument("--step", type=float, default=1e-3)
    d.add_argument("--out", default="diagnostics")
    d.set_defaults(func=cmd_diagnose)

    b = sub.add_parser("bound", help="evaluate the finite-sample bounds")
    b.add_argument("--config", help="TOML file with bound inputs")
    b.add_argument("--c-x", dest="c_x", type=float)
    b.add_argument("--c-u", dest="c_u", type=float)
    b.add_argument("--layer-norms", dest="layer_norms",
                   help="comma-separated per-layer Frobenius bounds")
    b.add_argument("--d", type=int)
    b.add_argument("--n", type=int)
    b.add_argument("--delta", type=float)
    b.add_argument("--nu", type=float)
    b.add_argument("--c-t", dest="c_t", type=float)
    b.add_argument("--sigma-star", dest="sigma_star", type=float)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bound)

    s = sub.add_parser("sweep", help="run the (N, R, trial) experiment grid")
    s.add_argument("--config", help="TOML experiment configuration")
    s.add_argument("--mode", choices=("tcl", "mvcl", "eeg"))
    s.add_argument("--d", type=int)
    s.add_argument("--t", type=int)
    s.add_argument("--n-list", dest="n_list")
    s.add_argument("--r-list", dest="r_list")
    s.add_argument("--trials", type=int)
    s.add_argument("--base-seed", dest="base_seed", type=int)
    s.add_argument("--output-dir", dest="output_dir")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--learning-rate", dest="learning_rate", type=float)
    s.add_argument("--workers", type=int)
    s.add_argument("--eeg-path", dest="eeg_path")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="render charts from a results csv")
    r.add_argument("--results", required=True)
    r.add_argument("--out-svg", default="report.svg")
    r.add_argument("--out-md", default="report.md")
    r.add_argument("--metric")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
