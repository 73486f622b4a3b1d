"""Ground-truth generators for the time-contrastive and multiview settings.

Latent components are drawn independently given an auxiliary variable (a time
frame label, or a second view), mixed through an exactly invertible
one-hidden-layer leaky-ReLU network, and paired with labels for contrastive
training.  Frame-modulated Gaussian latents additionally expose closed-form
conditional score derivatives, which feed the variability-matrix check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FrameParams:
    """Per-frame, per-component modulation: mean (T, D) and scale (T, D) > 0."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        scale = np.asarray(self.scale, dtype=float)
        if mean.ndim != 2 or mean.shape != scale.shape:
            raise ValueError("mean and scale must both be (T, D)")
        if np.any(scale < 0.0):
            raise ValueError("scales must be >= 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def n_frames(self) -> int:
        return self.mean.shape[0]

    @property
    def d(self) -> int:
        return self.mean.shape[1]


def random_frame_params(n_frames: int, d: int, rng: np.random.Generator,
                        mean_range: tuple[float, float] = (-2.0, 2.0),
                        scale_range: tuple[float, float] = (0.3, 1.2),
                        modulate: str = "both") -> FrameParams:
    """Draw frame modulation vectors.

    modulate chooses which factors vary across frames: "both" (default),
    "mean" (fixed unit scale) or "scale" (zero mean).
    """
    if modulate not in ("both", "mean", "scale"):
        raise ValueError(f"unknown modulate option {modulate!r}")
    mean = rng.uniform(mean_range[0], mean_range[1], size=(n_frames, d))
    scale = rng.uniform(scale_range[0], scale_range[1], size=(n_frames, d))
    if modulate == "mean":
        scale = np.ones_like(scale)
    elif modulate == "scale":
        mean = np.zeros_like(mean)
    return FrameParams(mean=mean, scale=scale)


@dataclass(frozen=True)
class MixingNet:
    """One-hidden-layer mixing network x = A2 leaky(A1 s), exactly invertible.

    Both matrices are square and nonsingular and leaky-ReLU is a bijection,
    so the inverse is available in closed form.
    """

    a1: np.ndarray
    a2: np.ndarray
    slope: float = 0.2

    def __post_init__(self):
        a1 = np.asarray(self.a1, dtype=float)
        a2 = np.asarray(self.a2, dtype=float)
        if a1.ndim != 2 or a1.shape[0] != a1.shape[1] or a1.shape != a2.shape:
            raise ValueError("mixing matrices must be square with equal shape")
        if not 0.0 < self.slope <= 1.0:
            raise ValueError("leaky slope must lie in (0, 1]")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)

    @property
    def d(self) -> int:
        return self.a1.shape[0]


def sample_mixing_net(d: int, rng: np.random.Generator, slope: float = 0.2,
                      cond_cap: float = 1e4, max_attempts: int = 100) -> MixingNet:
    """Standard-Gaussian mixing weights, resampled until well conditioned."""
    for _ in range(max_attempts):
        a1 = rng.standard_normal((d, d))
        a2 = rng.standard_normal((d, d))
        if np.linalg.cond(a1) <= cond_cap and np.linalg.cond(a2) <= cond_cap:
            return MixingNet(a1=a1, a2=a2, slope=slope)
    raise RuntimeError(
        f"no well-conditioned mixing matrices after {max_attempts} attempts"
    )


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0.0, z, slope * z)


def _leaky_inv(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0.0, z, z / slope)


def mix(net: MixingNet, s: np.ndarray) -> np.ndarray:
    """Apply the mixing network to a vector or to rows of samples."""
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    rows = s[None, :] if single else s
    if rows.shape[1] != net.d:
        raise ValueError(f"expected {net.d} components, got {rows.shape[1]}")
    x = _leaky(rows @ net.a1.T, net.slope) @ net.a2.T
    return x[0] if single else x


def invert_mix(net: MixingNet, x: np.ndarray) -> np.ndarray:
    """Exact inverse of mix (layer-by-layer)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if rows.shape[1] != net.d:
        raise ValueError(f"expected {net.d} components, got {rows.shape[1]}")
    hidden = np.linalg.solve(net.a2, rows.T).T
    s = np.linalg.solve(net.a1, _leaky_inv(hidden, net.slope).T).T
    return s[0] if single else s


@dataclass(frozen=True)
class SampleBatch:
    """Observed rows (x, u) with contrastive labels d in {-1, +1}.

    Rows labeled +1 carry the natural pairing; rows labeled -1 carry an
    auxiliary value taken from a different row.  ground_truth_s, when present,
    always corresponds to x.
    """

    x: np.ndarray
    u: np.ndarray
    d: np.ndarray
    s: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        u = np.asarray(self.u, dtype=float)
        d = np.asarray(self.d, dtype=int)
        if x.ndim != 2 or u.ndim != 2 or x.shape[0] != u.shape[0]:
            raise ValueError("x and u must be 2-D with matching row counts")
        if d.shape != (x.shape[0],):
            raise ValueError("labels must be one per row")
        if not np.all(np.isin(d, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "d", d)
        if self.s is not None:
            s = np.asarray(self.s, dtype=float)
            if s.shape[0] != x.shape[0]:
                raise ValueError("ground-truth rows must match x rows")
            object.__setattr__(self, "s", s)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def positives(self) -> "SampleBatch":
        keep = self.d == 1
        return SampleBatch(x=self.x[keep], u=self.u[keep], d=self.d[keep],
                           s=None if self.s is None else self.s[keep])


@dataclass(frozen=True)
class GenerativeSpec:
    """Everything needed to draw a synthetic dataset.

    mode "tcl": frame-modulated latents (Gaussian-Laplacian product by
    default, pure Gaussian via latent_law="gaussian"), auxiliary u encodes
    the frame index.  mode "mvcl": uniform latents, auxiliary u is a noisy
    second view through mixing_view.
    """

    mode: str
    d: int
    mixing: MixingNet
    frames: FrameParams | None = None
    latent_law: str = "gauss_laplace"
    u_encoding: str = "onehot"
    mixing_view: MixingNet | None = None
    uniform_ranges: np.ndarray | None = None
    noise_scale: float = 0.1

    def __post_init__(self):
        if self.mode not in ("tcl", "mvcl"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.latent_law not in ("gauss_laplace", "gaussian"):
            raise ValueError(f"unknown latent law {self.latent_law!r}")
        if self.u_encoding not in ("onehot", "index"):
            raise ValueError(f"unknown auxiliary encoding {self.u_encoding!r}")
        if self.mixing.d != self.d:
            raise ValueError("mixing width must equal d")
        if self.mode == "tcl":
            if self.frames is None:
                raise ValueError("tcl mode needs frame parameters")
            if self.frames.d != self.d:
                raise ValueError("frame parameters must cover d components")
        else:
            if self.mixing_view is None or self.uniform_ranges is None:
                raise ValueError("mvcl mode needs a view network and ranges")
            ranges = np.asarray(self.uniform_ranges, dtype=float)
            if ranges.shape != (self.d,):
                raise ValueError("uniform_ranges must be (d,)")
            if np.any(ranges <= 0.0):
                raise ValueError("uniform ranges must be positive")
            object.__setattr__(self, "uniform_ranges", ranges)

    @property
    def n_frames(self) -> int:
        if self.frames is None:
            raise ValueError("not a frame-based spec")
        return self.frames.n_frames

    @property
    def u_dim(self) -> int:
        if self.mode == "mvcl":
            return self.d
        return self.n_frames if self.u_encoding == "onehot" else 1


def make_tcl_spec(d: int, n_frames: int, seed: int,
                  latent_law: str = "gauss_laplace",
                  u_encoding: str = "onehot",
                  modulate: str = "both",
                  slope: float = 0.2) -> GenerativeSpec:
    rng = np.random.default_rng(seed)
    frames = random_frame_params(n_frames, d, rng, modulate=modulate)
    mixing = sample_mixing_net(d, rng, slope=slope)
    return GenerativeSpec(mode="tcl", d=d, mixing=mixing, frames=frames,
                          latent_law=latent_law, u_encoding=u_encoding)


def make_mvcl_spec(d: int, seed: int,
                   uniform_ranges: Sequence[float] | None = None,
                   noise_scale: float = 0.1,
                   slope: float = 0.2) -> GenerativeSpec:
    rng = np.random.default_rng(seed)
    mixing = sample_mixing_net(d, rng, slope=slope)
    view = sample_mixing_net(d, rng, slope=slope)
    if uniform_ranges is None:
        uniform_ranges = 1.0 + np.arange(d, dtype=float)
    return GenerativeSpec(mode="mvcl", d=d, mixing=mixing, mixing_view=view,
                          uniform_ranges=np.asarray(uniform_ranges, dtype=float),
                          noise_scale=noise_scale)


def _encode_frames(frame_idx: np.ndarray, n_frames: int, encoding: str) -> np.ndarray:
    if encoding == "onehot":
        return np.eye(n_frames)[frame_idx]
    return frame_idx[:, None].astype(float)


def sample_tcl(spec: GenerativeSpec, n: int, seed: int) -> SampleBatch:
    """Draw n frame-modulated samples (positives only, equal frames).

    Within frame tau, component i is mean[tau, i] + scale[tau, i] * e where
    e is a standard Gaussian draw times an independent unit-Laplacian draw
    (or a single Gaussian draw under latent_law="gaussian").
    """
    if spec.mode != "tcl":
        raise ValueError("spec is not a tcl spec")
    t = spec.n_frames
    if n % t != 0:
        raise ValueError(f"n={n} is not divisible by the {t} frames")
    rng = np.random.default_rng(seed)
    per = n // t
    frame_idx = np.repeat(np.arange(t), per)
    base = rng.standard_normal((n, spec.d))
    if spec.latent_law == "gauss_laplace":
        base = base * rng.laplace(0.0, 1.0, size=(n, spec.d))
    s = spec.frames.mean[frame_idx] + spec.frames.scale[frame_idx] * base
    x = mix(spec.mixing, s)
    u = _encode_frames(frame_idx, t, spec.u_encoding)
    return SampleBatch(x=x, u=u, d=np.ones(n, dtype=int), s=s)


def sample_mvcl(spec: GenerativeSpec, n: int, seed: int) -> SampleBatch:
    """Draw n multiview samples: u is a second view of s under extra noise."""
    if spec.mode != "mvcl":
        raise ValueError("spec is not an mvcl spec")
    rng = np.random.default_rng(seed)
    a = spec.uniform_ranges
    s = rng.uniform(-a, a, size=(n, spec.d))
    x = mix(spec.mixing, s)
    noise = rng.standard_normal((n, spec.d)) * rng.laplace(0.0, 1.0, (n, spec.d))
    u = mix(spec.mixing_view, s + spec.noise_scale * a * noise)
    return SampleBatch(x=x, u=u, d=np.ones(n, dtype=int), s=s)


def sample_dataset(spec: GenerativeSpec, n: int, seed: int) -> SampleBatch:
    if spec.mode == "tcl":
        return sample_tcl(spec, n, seed)
    return sample_mvcl(spec, n, seed)


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    # conjugate a full cycle by a random permutation: never a fixed point
    sigma = rng.permutation(n)
    der = np.empty(n, dtype=int)
    der[sigma] = sigma[np.arange(1, n + 1) % n]
    return der


def make_contrastive_pairs(batch: SampleBatch, seed: int) -> SampleBatch:
    """Double a positive batch with negatives whose u comes from another row.

    The u block of the negative half is permuted by a derangement, so no
    negative row keeps its own auxiliary value.
    """
    if not np.all(batch.d == 1):
        raise ValueError("expected a batch of positive pairs only")
    if batch.n < 2:
        raise ValueError("need at least 2 rows to build negatives")
    rng = np.random.default_rng(seed)
    der = _derangement(batch.n, rng)
    x = np.concatenate([batch.x, batch.x], axis=0)
    u = np.concatenate([batch.u, batch.u[der]], axis=0)
    d = np.concatenate([np.ones(batch.n, dtype=int), -np.ones(batch.n, dtype=int)])
    s = None if batch.s is None else np.concatenate([batch.s, batch.s], axis=0)
    return SampleBatch(x=x, u=u, d=d, s=s)


# --- conditional score derivatives and the variability matrix ------------------


@dataclass(frozen=True)
class GaussianScores:
    """Closed-form score derivatives for frame-modulated Gaussian latents.

    For frame u with mean m_u and variance v_u, the conditional log density
    of component i has first derivative -(y_i - m_u,i)/v_u,i and second
    derivative -1/v_u,i in y_i.  The auxiliary value u is a row index into
    mean/var.
    """

    mean: np.ndarray  # (T, D)
    var: np.ndarray   # (T, D), > 0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mean.shape != var.shape or mean.ndim != 2:
            raise ValueError("mean and var must both be (T, D)")
        if np.any(var <= 0.0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @staticmethod
    def from_frames(frames: FrameParams) -> "GaussianScores":
        return GaussianScores(mean=frames.mean, var=frames.scale ** 2)

    def q1(self, y: np.ndarray, u: int) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return -(y - self.mean[u]) / self.var[u]

    def q2(self, y: np.ndarray, u: int) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return -np.ones_like(y) / self.var[u]


def variability_matrix(scores, y: np.ndarray,
                       u_list: Sequence) -> tuple[np.ndarray, float]:
    """Difference matrix of stacked score derivatives across auxiliary values.

    Column j is w(y, u_j) - w(y, u_0) where w stacks the first and second
    conditional score derivatives of every component, giving a 2D x 2D
    matrix; its smallest singular value measures how much the auxiliary
    variable actually moves the conditional distributions.
    """
    y = np.asarray(y, dtype=float)
    d = y.shape[0]
    if len(u_list) < 2 * d + 1:
        raise ValueError(f"need at least {2 * d + 1} auxiliary values, "
                         f"got {len(u_list)}")
    u_list = list(u_list)[: 2 * d + 1]

    def w(u):
        return np.concatenate([scores.q1(y, u), scores.q2(y, u)])

    w0 = w(u_list[0])
    cols = [w(u) - w0 for u in u_list[1:]]
    mat = np.stack(cols, axis=1)
    sigma_min = float(np.linalg.svd(mat, compute_uv=False)[-1])
    return mat, sigma_min


def sigma_star(scores, y_points: np.ndarray, u_list: Sequence) -> float:
    """Best variability over candidate evaluation points: max of sigma_min."""
    y_points = np.atleast_2d(np.asarray(y_points, dtype=float))
    best = 0.0
    for y in y_points:
        _, smin = variability_matrix(scores, y, u_list)
        best = max(best, smin)
    return best


# --- dataset and spec serialization --------------------------------------------


def save_dataset(path, batch: SampleBatch) -> None:
    """CSV with columns s_1..s_D (when known), x_1..x_D, u_1..u_Du, d."""
    cols = []
    header = []
    if batch.s is not None:
        header += [f"s_{i + 1}" for i in range(batch.s.shape[1])]
        cols.append(batch.s)
    header += [f"x_{i + 1}" for i in range(batch.x.shape[1])]
    cols.append(batch.x)
    header += [f"u_{i + 1}" for i in range(batch.u.shape[1])]
    cols.append(batch.u)
    header.append("d")
    cols.append(batch.d[:, None].astype(float))
    data = np.concatenate(cols, axis=1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def load_dataset(path) -> SampleBatch:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    names = [h.rsplit("_", 1)[0] for h in header]
    s_cols = [i for i, n in enumerate(names) if n == "s"]
    x_cols = [i for i, n in enumerate(names) if n == "x"]
    u_cols = [i for i, n in enumerate(names) if n == "u"]
    d_col = header.index("d")
    return SampleBatch(
        x=data[:, x_cols],
        u=data[:, u_cols],
        d=data[:, d_col].astype(int),
        s=data[:, s_cols] if s_cols else None,
    )


def spec_to_dict(spec: GenerativeSpec) -> dict:
    d = {
        "mode": spec.mode,
        "d": spec.d,
        "latent_law": spec.latent_law,
        "u_encoding": spec.u_encoding,
        "noise_scale": spec.noise_scale,
        "mixing": {"a1": spec.mixing.a1.tolist(), "a2": spec.mixing.a2.tolist(),
                   "slope": spec.mixing.slope},
    }
    if spec.frames is not None:
        d["frames"] = {"mean": spec.frames.mean.tolist(),
                       "scale": spec.frames.scale.tolist()}
    if spec.mixing_view is not None:
        d["mixing_view"] = {"a1": spec.mixing_view.a1.tolist(),
                            "a2": spec.mixing_view.a2.tolist(),
                            "slope": spec.mixing_view.slope}
    if spec.uniform_ranges is not None:
        d["uniform_ranges"] = spec.uniform_ranges.tolist()
    return d


def spec_from_dict(d: dict) -> GenerativeSpec:
    def net(key):
        if key not in d:
            return None
        m = d[key]
        return MixingNet(a1=np.asarray(m["a1"]), a2=np.asarray(m["a2"]),
                         slope=float(m["slope"]))

    frames = None
    if "frames" in d:
        frames = FrameParams(mean=np.asarray(d["frames"]["mean"]),
                             scale=np.asarray(d["frames"]["scale"]))
    ranges = d.get("uniform_ranges")
    return GenerativeSpec(
        mode=d["mode"], d=int(d["d"]), mixing=net("mixing"), frames=frames,
        latent_law=d.get("latent_law", "gauss_laplace"),
        u_encoding=d.get("u_encoding", "onehot"),
        mixing_view=net("mixing_view"),
        uniform_ranges=None if ranges is None else np.asarray(ranges, dtype=float),
        noise_scale=float(d.get("noise_scale", 0.1)),
    )


def save_manifest(path, spec: GenerativeSpec, seed: int, n: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"spec": spec_to_dict(spec), "seed": seed, "n": n}, fh, indent=1)


def load_manifest(path) -> tuple[GenerativeSpec, dict]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return spec_from_dict(d["spec"]), {"seed": d.get("seed"), "n": d.get("n")}
