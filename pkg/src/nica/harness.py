"""Experiment orchestration: sweeps, EEG ingestion, aggregation, reporting.

A sweep cell is one (mode, N, width, trial) pipeline run: generate data,
train the contrastive model, estimate per-component MI against the ground
truth, and measure the cross-derivative diagnostic.  Cells are independent
and seeded individually, so adding cells never perturbs existing ones, and a
failing cell is recorded rather than fatal.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import genmodel, metrics, train as training
from .diagnostics import gamma_report
from .genmodel import SampleBatch
from .nn import forward_batch
from .train import GclModel, TrainConfig, extract_features, init_gcl_model

RESULT_COLUMNS = ("mode", "N", "R", "trial", "seed", "mean_mi", "gamma_mean",
                  "test_error", "final_loss", "wall_ms", "status")

EEG_FEATURE_COLUMNS = 14
EEG_TRAIN_ROWS = 12000
EEG_TEST_ROWS = 3000
EEG_FRAMES = 60


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "tcl"
    d: int = 2
    t: int = 5
    n_list: tuple[int, ...] = (5000, 10000)
    r_list: tuple[int, ...] = (4, 8, 16, 32, 64, 128, 256, 512)
    trials: int = 5
    base_seed: int = 0
    output_dir: str = "runs"
    epochs: int = 60
    batch_size: int = 256
    learning_rate: float = 5e-4
    holdout_fraction: float = 0.0
    mi_k: int = 5
    gamma_points: int = 20
    gamma_step: float = 0.1
    eeg_path: str | None = None
    eeg_feature_dim: int = 5
    workers: int | None = None

    def __post_init__(self):
        if self.mode not in ("tcl", "mvcl", "eeg"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.n_list or not self.r_list:
            raise ValueError("n_list and r_list must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "r_list", tuple(int(r) for r in self.r_list))

    def resolved_workers(self) -> int:
        cap = os.environ.get("NICA_THREADS")
        w = self.workers if self.workers is not None else (os.cpu_count() or 1)
        if cap:
            w = min(w, max(1, int(cap)))
        return max(1, w)


def trial_seed(base_seed: int, mode: str, n: int, r: int, trial: int) -> int:
    """Stable per-cell seed: base_seed xor a content hash of the cell key."""
    key = f"{mode}:{n}:{r}:{trial}".encode()
    h = int.from_bytes(hashlib.sha256(key).digest()[:4], "big")
    return (int(base_seed) ^ h) & 0xFFFFFFFF


def data_seed(base_seed: int, mode: str, n: int, trial: int) -> int:
    """Per-trial dataset seed, shared by every width in the sweep.

    Widths are compared on common data (paired trials); adding widths to the
    grid still never perturbs existing cells.
    """
    key = f"data:{mode}:{n}:{trial}".encode()
    h = int.from_bytes(hashlib.sha256(key).digest()[:4], "big")
    return (int(base_seed) ^ h) & 0xFFFFFFFF


def _split_holdout(batch: SampleBatch, fraction: float, seed: int):
    if fraction <= 0.0:
        return batch, None
    rng = np.random.default_rng(seed)
    order = rng.permutation(batch.n)
    n_hold = max(1, int(round(batch.n * fraction)))
    hold, keep = order[:n_hold], order[n_hold:]
    sub = lambda idx: SampleBatch(x=batch.x[idx], u=batch.u[idx], d=batch.d[idx],
                                  s=None if batch.s is None else batch.s[idx])
    train_part, hold_part = sub(keep), sub(hold)
    if not (np.any(train_part.d == 1) and np.any(train_part.d == -1)):
        return batch, None
    return train_part, hold_part


def _run_cell(payload: dict) -> dict:
    """One sweep cell; never raises, failures land in the status column."""
    mode = payload["mode"]
    n = payload["n"]
    r = payload["r"]
    trial = payload["trial"]
    seed = trial_seed(payload["base_seed"], mode, n, r, trial)
    row = {c: "" for c in RESULT_COLUMNS}
    row.update(mode=mode, N=n, R=r, trial=trial, seed=seed, status="ok")
    started = time.perf_counter()
    try:
        if mode == "eeg":
            _run_eeg_cell(payload, seed, row)
        else:
            _run_synthetic_cell(payload, seed, row)
    except Exception as exc:  # crash isolation: record, keep sweeping
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    row["wall_ms"] = round((time.perf_counter() - started) * 1000.0, 3)
    return row


def _run_synthetic_cell(payload: dict, seed: int, row: dict) -> None:
    mode, n, r = payload["mode"], payload["n"], payload["r"]
    dseed = data_seed(payload["base_seed"], mode, n, payload["trial"])
    if mode == "tcl":
        spec = genmodel.make_tcl_spec(payload["d"], payload["t"], dseed)
    else:
        spec = genmodel.make_mvcl_spec(payload["d"], dseed)
    batch = genmodel.sample_dataset(spec, n, dseed + 1_000_003)
    pairs = genmodel.make_contrastive_pairs(batch, dseed + 2_000_003)
    train_part, holdout = _split_holdout(pairs, payload["holdout_fraction"],
                                         seed + 4_000_003)
    model = init_gcl_model(spec.d, spec.u_dim, r, seed + 3_000_003)
    cfg = TrainConfig(width=r, epochs=payload["epochs"],
                      batch_size=payload["batch_size"],
                      learning_rate=payload["learning_rate"],
                      seed=seed + 3_000_003)
    result = training.train(model, train_part, cfg, holdout=holdout)

    feats = extract_features(result.model, batch.x)
    rep = metrics.mi_report(feats, batch.s, k=payload["mi_k"], seed=seed)
    row["mean_mi"] = rep.mean_mi
    row["final_loss"] = result.final_loss

    h = result.model.h
    comp = lambda s: forward_batch(h, genmodel.mix(spec.mixing, s)[None, :])[0]
    pts = batch.s[: payload["gamma_points"]]
    try:
        grep = gamma_report(comp, pts, step=payload["gamma_step"])
        row["gamma_mean"] = grep.overall_mean_norm
    except Exception:
        row["gamma_mean"] = ""  # diagnostic failure is not a cell failure


def _run_eeg_cell(payload: dict, seed: int, row: dict) -> None:
    data = _EEG_CACHE.get(payload.get("eeg_path"))
    if data is None:
        data = load_eeg_data(payload.get("eeg_path"), payload["base_seed"])
        _EEG_CACHE[payload.get("eeg_path")] = data
    r = payload["r"]
    pairs = genmodel.make_contrastive_pairs(data.train, seed + 2_000_003)
    model = init_gcl_model(payload["eeg_feature_dim"], data.train.u.shape[1], r,
                           seed + 3_000_003, x_dim=data.train.x.shape[1])
    cfg = TrainConfig(width=r, epochs=payload["epochs"],
                      batch_size=payload["batch_size"],
                      learning_rate=payload["learning_rate"],
                      seed=seed + 3_000_003)
    result = training.train(model, pairs, cfg)
    feats_train = extract_features(result.model, data.train.x)
    feats_test = extract_features(result.model, data.test_x)
    clf = metrics.fit_linear_classifier(feats_train, data.train_labels)
    row["test_error"] = metrics.classification_error(clf, feats_test,
                                                     data.test_labels)
    row["final_loss"] = result.final_loss


_EEG_CACHE: dict = {}


def _cells(config: ExperimentConfig) -> list[dict]:
    base = {
        "base_seed": config.base_seed, "d": config.d, "t": config.t,
        "epochs": config.epochs, "batch_size": config.batch_size,
        "learning_rate": config.learning_rate, "mi_k": config.mi_k,
        "gamma_points": config.gamma_points, "gamma_step": config.gamma_step,
        "holdout_fraction": config.holdout_fraction,
        "eeg_path": config.eeg_path, "eeg_feature_dim": config.eeg_feature_dim,
    }
    cells = []
    n_values = config.n_list if config.mode != "eeg" else (EEG_TRAIN_ROWS,)
    for n in n_values:
        for r in config.r_list:
            for trial in range(config.trials):
                cells.append({**base, "mode": config.mode, "n": n, "r": r,
                              "trial": trial})
    return cells


def run_sweep(config: ExperimentConfig) -> list[dict]:
    """Run every (N, R, trial) cell; returns one result row per cell.

    Rows come back sorted by (N, R, trial) regardless of completion order.
    Failures are rows with a non-"ok" status; they never abort the sweep.
    """
    cells = _cells(config)
    workers = min(config.resolved_workers(), len(cells))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    rows.sort(key=lambda r: (r["mode"], r["N"], r["R"], r["trial"]))
    return rows


def _format_cell(value) -> str:
    if value == "" or value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row.get(c, "")) for c in
                              RESULT_COLUMNS) + "\n")


def read_results_csv(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            row = dict(zip(header, parts))
            for key in ("N", "R", "trial", "seed"):
                if row.get(key):
                    row[key] = int(row[key])
            for key in ("mean_mi", "gamma_mean", "test_error", "final_loss",
                        "wall_ms"):
                row[key] = float(row[key]) if row.get(key) else ""
            rows.append(row)
    return rows


def aggregate_rows(rows: list[dict], metric: str | None = None) -> list[dict]:
    """Mean and standard error of a metric per (mode, N, R)."""
    ok = [r for r in rows if r.get("status", "ok") == "ok"]
    if metric is None:
        metric = "mean_mi" if any(r.get("mean_mi") != "" for r in ok) else "test_error"
    groups: dict[tuple, list[float]] = {}
    for r in ok:
        if r.get(metric) == "":
            continue
        groups.setdefault((r["mode"], r["N"], r["R"]), []).append(float(r[metric]))
    out = []
    for (mode, n, width), vals in sorted(groups.items()):
        arr = np.asarray(vals)
        stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        out.append({"mode": mode, "N": n, "R": width, "metric": metric,
                    "mean": float(arr.mean()), "stderr": stderr,
                    "count": len(arr)})
    return out


def write_aggregate_csv(path, agg: list[dict]) -> None:
    cols = ("mode", "N", "R", "metric", "mean", "stderr", "count")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in agg:
            fh.write(",".join(_format_cell(row[c]) for c in cols) + "\n")


# --- EEG ingestion ----------------------------------------------------------------


@dataclass(frozen=True)
class EegData:
    """Framed, standardized EEG splits: contrastive train set plus test arrays."""

    train: SampleBatch
    train_labels: np.ndarray
    test_x: np.ndarray
    test_labels: np.ndarray
    n_frames: int
    column_mean: np.ndarray
    column_scale: np.ndarray


def _read_eeg_table(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    in_data = not str(path).lower().endswith(".arff")
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("%") or line.startswith("#"):
                continue
            if line.lower().startswith("@"):
                if line.lower().startswith("@data"):
                    in_data = True
                continue
            if not in_data:
                continue
            parts = line.split(",")
            if any(ch.isalpha() for ch in parts[0]):
                continue  # header line in a csv export
            rows.append([float(p) for p in parts])
    if not rows:
        raise ValueError(f"{path}: no data rows found")
    table = np.asarray(rows, dtype=float)
    if table.shape[1] != EEG_FEATURE_COLUMNS + 1:
        raise ValueError(
            f"{path}: expected {EEG_FEATURE_COLUMNS} feature columns plus a "
            f"label, got {table.shape[1]} columns"
        )
    return table[:, :EEG_FEATURE_COLUMNS], table[:, EEG_FEATURE_COLUMNS].astype(int)


def _prepare_eeg(features: np.ndarray, labels: np.ndarray,
                 source: str) -> EegData:
    n = features.shape[0]
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError(f"{source}: labels must be binary 0/1")
    n_train, n_test = EEG_TRAIN_ROWS, EEG_TEST_ROWS
    if n < n_train + n_test:
        n_train = int(n * n_train / (n_train + n_test))
        n_train -= n_train % EEG_FRAMES
        n_test = n - n_train
        warnings.warn(
            f"{source}: only {n} rows; using proportional split "
            f"{n_train}/{n_test}", stacklevel=2)
    if n_train < EEG_FRAMES:
        raise ValueError(f"{source}: too few rows ({n}) to build "
                         f"{EEG_FRAMES} frames")
    train_x = features[:n_train]
    train_labels = labels[:n_train]
    test_x = features[n_train:n_train + n_test]
    test_labels = labels[n_train:n_train + n_test]

    mean = train_x.mean(axis=0)
    centered = train_x - mean
    mean = mean + centered.mean(axis=0)  # second pass kills large-offset roundoff
    centered = train_x - mean
    scale = centered.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    train_x = centered / scale
    test_x = (test_x - mean) / scale

    per_frame = n_train // EEG_FRAMES
    frame_idx = np.repeat(np.arange(EEG_FRAMES), per_frame)
    u = np.eye(EEG_FRAMES)[frame_idx]
    batch = SampleBatch(x=train_x, u=u, d=np.ones(n_train, dtype=int))
    return EegData(train=batch, train_labels=train_labels, test_x=test_x,
                   test_labels=test_labels, n_frames=EEG_FRAMES,
                   column_mean=mean, column_scale=scale)


def ingest_eeg(path) -> EegData:
    """Load an EEG eye-state file (ARFF or CSV: 14 features + binary label).

    Chronological order is preserved: the first 12,000 rows become the
    training set, framed into 60 contiguous blocks with one-hot frame
    auxiliaries; up to 3,000 following rows are the test set.  Features are
    standardized with training-set statistics.  Smaller files fall back to a
    proportional split with a warning.
    """
    features, labels = _read_eeg_table(path)
    return _prepare_eeg(features, labels, str(path))


def synthetic_eeg_standin(seed: int = 0, rows: int = EEG_TRAIN_ROWS + EEG_TEST_ROWS
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Shape-compatible stand-in for the real recording.

    Five nonstationary latent sources (block-wise means and scales), a fixed
    nonlinear 14-channel mixture, and a binary state driven by the latents.
    Used to exercise the pipeline when the real file is absent.
    """
    rng = np.random.default_rng(seed)
    d = 5
    block = 200
    n_blocks = (rows + block - 1) // block
    means = rng.uniform(-1.5, 1.5, size=(n_blocks, d))
    scales = rng.uniform(0.3, 1.5, size=(n_blocks, d))
    idx = np.repeat(np.arange(n_blocks), block)[:rows]
    s = means[idx] + scales[idx] * rng.standard_normal((rows, d))
    m1 = rng.standard_normal((EEG_FEATURE_COLUMNS, d)) / np.sqrt(d)
    m2 = rng.standard_normal((EEG_FEATURE_COLUMNS, EEG_FEATURE_COLUMNS))
    m2 /= np.sqrt(EEG_FEATURE_COLUMNS)
    x = np.tanh(s @ m1.T) @ m2.T
    x += 0.05 * rng.standard_normal(x.shape)
    x = 50.0 * x + 4000.0  # raw EEG scales vary wildly; standardization is tested
    logits = s[:, 0] + 0.8 * s[:, 1] * s[:, 2] - 0.4 * s[:, 3] + 0.2
    labels = (logits > 0.0).astype(int)
    return x, labels


def load_eeg_data(path: str | None, seed: int) -> EegData:
    if path and os.path.exists(path):
        return ingest_eeg(path)
    features, labels = synthetic_eeg_standin(seed)
    return _prepare_eeg(features, labels, "synthetic stand-in")


def eeg_pipeline(config: ExperimentConfig) -> tuple[list[dict], float]:
    """Per-(R, trial) downstream test errors plus the majority-class baseline."""
    cfg = config if config.mode == "eeg" else _replace_mode(config, "eeg")
    rows = run_sweep(cfg)
    data = load_eeg_data(cfg.eeg_path, cfg.base_seed)
    counts = np.bincount(data.test_labels, minlength=2)
    baseline = float(counts.min() / counts.sum())
    return rows, baseline


def _replace_mode(config: ExperimentConfig, mode: str) -> ExperimentConfig:
    d = asdict(config)
    d["mode"] = mode
    return ExperimentConfig(**d)


# --- manifest -----------------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    artifacts: dict[str, str] = field(default_factory=dict)
    hashes: dict[str, str] = field(default_factory=dict)
    wall_ms: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, path, wall_ms: float | None = None) -> None:
        self.artifacts[name] = str(path)
        self.hashes[name] = _sha256(path)
        if wall_ms is not None:
            self.wall_ms[name] = wall_ms

    def validate(self) -> None:
        missing = [p for p in self.artifacts.values() if not os.path.exists(p)]
        if missing:
            raise FileNotFoundError(f"manifest references missing files: {missing}")

    def save(self, path) -> None:
        self.validate()
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"config": self.config, "artifacts": self.artifacts,
                       "hashes": self.hashes, "wall_ms": self.wall_ms}, fh,
                      indent=1)


# --- reporting ------------------------------------------------------------------------

_PALETTE = ("#1f6fb2", "#d1495b", "#3d9970", "#8e5ba6", "#c98a00")


def _svg_text(x, y, s, anchor="middle", size=12) -> str:
    return (f'<text x="{x:.6g}" y="{y:.6g}" font-family="sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}">{s}</text>')


def render_report(rows: list[dict], out_svg, out_md,
                  metric: str | None = None) -> None:
    """Line chart of the aggregated metric vs width (log-2 axis), one series
    per N, with standard-error bars, plus a markdown summary table.

    The SVG is built from the aggregated values alone, so identical inputs
    produce identical bytes.
    """
    agg = aggregate_rows(rows, metric=metric)
    if not agg:
        raise ValueError("no aggregated rows to plot")
    metric = agg[0]["metric"]

    width, height = 640, 420
    left, right, top, bottom = 70, 200, 40, 50
    plot_w = width - left - right
    plot_h = height - top - bottom

    xs = sorted({row["R"] for row in agg})
    series_keys = sorted({(row["mode"], row["N"]) for row in agg})
    xpos = {r: np.log2(r) for r in xs}
    x_lo, x_hi = min(xpos.values()), max(xpos.values())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    y_vals = [row["mean"] + row["stderr"] for row in agg]
    y_vals += [row["mean"] - row["stderr"] for row in agg]
    y_lo, y_hi = min(y_vals), max(y_vals)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.08 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(r):
        return left + plot_w * (xpos[r] - x_lo) / (x_hi - x_lo)

    def py(v):
        return top + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" '
        f'stroke="black"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" '
        f'y2="{top + plot_h}" stroke="black"/>',
        _svg_text(left + plot_w / 2, height - 12, "width R (log2 axis)"),
        _svg_text(left + plot_w / 2, 22, metric, size=14),
    ]
    for r in xs:
        x = px(r)
        parts.append(f'<line x1="{x:.6g}" y1="{top + plot_h}" x2="{x:.6g}" '
                     f'y2="{top + plot_h + 5}" stroke="black"/>')
        parts.append(_svg_text(x, top + plot_h + 20, str(r)))
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = y_lo + frac * (y_hi - y_lo)
        y = py(v)
        parts.append(f'<line x1="{left - 5}" y1="{y:.6g}" x2="{left}" '
                     f'y2="{y:.6g}" stroke="black"/>')
        parts.append(_svg_text(left - 10, y + 4, f"{v:.3g}", anchor="end",
                               size=11))

    for si, key in enumerate(series_keys):
        mode, n = key
        color = _PALETTE[si % len(_PALETTE)]
        pts = [row for row in agg if (row["mode"], row["N"]) == key]
        pts.sort(key=lambda row: row["R"])
        coords = " ".join(f"{px(p['R']):.6g},{py(p['mean']):.6g}" for p in pts)
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>')
        for p in pts:
            x, y = px(p["R"]), py(p["mean"])
            if p["stderr"] > 0:
                y1, y2 = py(p["mean"] - p["stderr"]), py(p["mean"] + p["stderr"])
                parts.append(f'<line x1="{x:.6g}" y1="{y1:.6g}" x2="{x:.6g}" '
                             f'y2="{y2:.6g}" stroke="{color}"/>')
            parts.append(f'<circle cx="{x:.6g}" cy="{y:.6g}" r="3" '
                         f'fill="{color}"/>')
        ly = top + 16 + 18 * si
        lx = left + plot_w + 14
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(_svg_text(lx + 28, ly, f"{mode} N={n}", anchor="start",
                               size=12))
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    with open(out_svg, "w", encoding="utf-8") as fh:
        fh.write(svg)

    lines = [f"# Sweep summary ({metric})", "",
             "| mode | N | R | mean | stderr | trials |",
             "| --- | --- | --- | --- | --- | --- |"]
    for row in agg:
        lines.append(f"| {row['mode']} | {row['N']} | {row['R']} | "
                     f"{row['mean']:.4f} | {row['stderr']:.4f} | "
                     f"{row['count']} |")
    with open(out_md, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
