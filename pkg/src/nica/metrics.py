"""Identifiability evaluation: nonparametric MI, assignment, linear probing.

Mutual information between recovered and true components is estimated with
the Kraskov-Stoegbauer-Grassberger k-nearest-neighbor estimator (nats); the
permutation ambiguity is resolved by an exact assignment solver on the
negated MI matrix.  A histogram plug-in estimator is kept as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, expit


def _jitter(v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # break exact ties; magnitude 1e-10 of the data range keeps ranks intact
    span = float(np.max(v) - np.min(v))
    if span <= 0.0:
        span = 1.0
    return v + rng.uniform(-1.0, 1.0, size=v.shape) * 1e-10 * span


def _strict_radius_counts(values: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """For each i, the number of j != i with |v_j - v_i| strictly below r_i."""
    order = np.argsort(values)
    sorted_v = values[order]
    hi = np.searchsorted(sorted_v, values + radii, side="left")
    lo = np.searchsorted(sorted_v, values - radii, side="right")
    return hi - lo - 1


def mi_knn(a: np.ndarray, b: np.ndarray, k: int = 5, seed: int = 0) -> float:
    """KSG mutual-information estimate between two scalar samples, in nats.

    Uses the max-norm variant: the distance to the k-th neighbor in the
    joint space sets a per-point radius, and marginal neighbor counts within
    that (open) radius enter through digammas.  The estimate is clipped at 0.

    Parameters
    ----------
    a, b : (N,) arrays of paired samples.
    k : neighbor count, 1 <= k < N.
    seed : seed for the deterministic tie-breaking jitter.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("samples must have equal length")
    n = a.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need N > k >= 1, got N={n}, k={k}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples must be finite")

    rng = np.random.default_rng(seed)
    a = _jitter(a, rng)
    b = _jitter(b, rng)
    joint = np.column_stack([a, b])
    tree = cKDTree(joint)
    radius = tree.query(joint, k=k + 1, p=np.inf)[0][:, k]
    nx = _strict_radius_counts(a, radius)
    ny = _strict_radius_counts(b, radius)
    mi = digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return max(float(mi), 0.0)


def mi_hist(a: np.ndarray, b: np.ndarray, bins: int | None = None) -> float:
    """Histogram plug-in MI (nats); coarse, used only to cross-check mi_knn."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("samples must have equal length")
    n = a.shape[0]
    if bins is None:
        bins = max(4, int(round(n ** (1.0 / 3.0))))
    joint, _, _ = np.histogram2d(a, b, bins=bins)
    p = joint / n
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    mask = p > 0
    mi = float(np.sum(p[mask] * np.log(p[mask] / (px @ py)[mask])))
    return max(mi, 0.0)


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost assignment on a square matrix.

    Classic O(n^3) potentials-and-augmenting-path algorithm.  Returns perm
    with perm[i] the column assigned to row i; the total cost is minimal
    over all permutations.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost entries must be finite")
    n = c.shape[0]

    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)   # match[j] = row owning column j (1-based)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        if match[j]:
            perm[match[j] - 1] = j - 1
    return perm


@dataclass(frozen=True)
class MiReport:
    """Pairwise MI between recovered and true components, after matching."""

    mi_matrix: np.ndarray       # (D, D), entry [i, j] = MI(y_i, s_j)
    assignment: np.ndarray      # permutation: component i matched to source assignment[i]
    per_component_mi: np.ndarray
    mean_mi: float

    def to_dict(self) -> dict:
        return {
            "mi_matrix": self.mi_matrix.tolist(),
            "assignment": self.assignment.tolist(),
            "per_component_mi": self.per_component_mi.tolist(),
            "mean_mi": self.mean_mi,
        }


def mi_report(y_rows: np.ndarray, s_rows: np.ndarray, k: int = 5,
              seed: int = 0) -> MiReport:
    """MI matrix between recovered components and sources, matched for permutation."""
    y = np.asarray(y_rows, dtype=float)
    s = np.asarray(s_rows, dtype=float)
    if y.shape != s.shape or y.ndim != 2:
        raise ValueError("recovered and true rows must share shape (N, D)")
    d = y.shape[1]
    mat = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            mat[i, j] = mi_knn(y[:, i], s[:, j], k=k, seed=seed + i * d + j)
    assignment = hungarian(-mat)
    matched = mat[np.arange(d), assignment]
    return MiReport(mi_matrix=mat, assignment=assignment,
                    per_component_mi=matched, mean_mi=float(np.mean(matched)))


# --- downstream linear probe ----------------------------------------------------


@dataclass(frozen=True)
class LinearClassifier:
    """Logistic-regression probe; decision is sign(w.y + b) on standardized y."""

    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def decision(self, features: np.ndarray) -> np.ndarray:
        z = (np.asarray(features, dtype=float) - self.feature_mean) / self.feature_scale
        return z @ self.weights + self.bias


def _to_signs(labels: np.ndarray, require_both: bool = True) -> np.ndarray:
    labels = np.asarray(labels)
    vals = np.unique(labels)
    if not np.all(np.isin(vals, (-1, 0, 1))):
        raise ValueError("labels must be coded in {0, 1} or {-1, +1}")
    if require_both and vals.size < 2:
        raise ValueError("need two classes to fit a classifier")
    return np.where(labels == 1, 1.0, -1.0)


def fit_linear_classifier(features: np.ndarray, labels: np.ndarray,
                          max_iters: int = 3000, tol: float = 1e-6,
                          ridge: float = 1e-6) -> LinearClassifier:
    """Fit a logistic probe by full-batch gradient descent to tolerance.

    Features are standardized internally (constant columns become zeros, so
    only the bias learns and the majority class wins).  A tiny ridge term
    keeps separable problems from drifting forever.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ValueError("features must be (N, D)")
    y = _to_signs(labels)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    z = (x - mean) / scale

    n, dim = z.shape
    w = np.zeros(dim)
    b = 0.0
    # logistic loss is (L/4)-smooth with L = mean squared row norm (plus bias)
    lr = 4.0 / (np.mean(np.sum(z * z, axis=1)) + 1.0 + 4.0 * ridge)
    for _ in range(max_iters):
        margin = y * (z @ w + b)
        sig = expit(-margin)
        gw = -(z.T @ (y * sig)) / n + ridge * w
        gb = -float(np.mean(y * sig))
        w -= lr * gw
        b -= lr * gb
        if np.sqrt(np.sum(gw * gw) + gb * gb) < tol:
            break
    return LinearClassifier(weights=w, bias=b, feature_mean=mean,
                            feature_scale=scale)


def classify(clf: LinearClassifier, features: np.ndarray) -> np.ndarray:
    """Predicted signs in {-1, +1}."""
    return np.where(clf.decision(features) >= 0.0, 1, -1)


def classification_error(clf: LinearClassifier, features: np.ndarray,
                         labels: np.ndarray) -> float:
    y = _to_signs(labels, require_both=False)
    return float(np.mean(classify(clf, features) != y))
