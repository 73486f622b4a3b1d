"""Identifiability diagnostics and closed-form bound calculators.

Two halves.  The first measures how far a learned unmixing is from a
componentwise recovery: cross second derivatives of the inverse of the
composed map c = h o g, obtained from a four-point stencil plus the
second-order inverse-function identity, together with an Amari-style score
on the Jacobian.  The second evaluates the finite-sample quantities that
bound those cross derivatives: network-class complexity, the strong-convexity
modulus of the logistic loss, the regression-gap bound, the optimal stencil
step, and the resulting cross-derivative bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class IllConditionedPointError(RuntimeError):
    """The composed map's Jacobian is too ill conditioned to invert here."""


class VariabilityError(ValueError):
    """The auxiliary variable provides no usable variability (sigma* = 0)."""


# --- numerical differentiation ---------------------------------------------------


def cross_derivative_stencil(f: Callable[[float, float], float], x: float,
                             y: float, dx: float, dy: float) -> float:
    """Four-point estimate of the mixed second derivative of f at (x, y).

    [f(x+dx, y+dy) - f(x+dx, y-dy) - f(x-dx, y+dy) + f(x-dx, y-dy)] / (4 dx dy),
    exact for bilinear functions, with O(dx^2 + dy^2) error otherwise.
    """
    if dx <= 0.0 or dy <= 0.0:
        raise ValueError("steps must be positive")
    corners = (f(x + dx, y + dy), f(x + dx, y - dy),
               f(x - dx, y + dy), f(x - dx, y - dy))
    if not all(math.isfinite(c) for c in corners):
        raise ValueError(f"non-finite corner value at ({x}, {y})")
    return (corners[0] - corners[1] - corners[2] + corners[3]) / (4.0 * dx * dy)


def optimal_step(eps: float, c_t: float) -> float:
    """Step size minimizing the stencil's noise-plus-truncation bound.

    (36 sqrt(eps) / c_t)^(1/4); degenerates to 0 when eps = 0, in which case
    the caller must floor the step before use.
    """
    if eps < 0.0:
        raise ValueError("eps must be >= 0")
    if c_t <= 0.0:
        raise ValueError("fourth-derivative bound must be positive")
    return (36.0 * math.sqrt(eps) / c_t) ** 0.25


def floored_step(raw_step: float, feature_scale: float = 1.0) -> float:
    """Floor a step at 1e-4 of the feature scale to avoid pure cancellation."""
    return max(raw_step, 1e-4 * feature_scale)


def jacobian_permutation_score(jac: np.ndarray) -> float:
    """Amari-style index: zero iff the matrix is a scaled permutation.

    Sums, over rows and over columns, the absolute-value mass outside the
    dominant entry relative to that entry.
    """
    a = np.abs(np.asarray(jac, dtype=float))
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    row_max = a.max(axis=1)
    col_max = a.max(axis=0)
    if np.any(row_max == 0.0) or np.any(col_max == 0.0):
        raise ValueError("matrix has an all-zero row or column")
    rows = float(np.sum(a.sum(axis=1) / row_max - 1.0))
    cols = float(np.sum(a.sum(axis=0) / col_max - 1.0))
    return rows + cols


# --- cross-derivatives of the inverse map ----------------------------------------


@dataclass(frozen=True)
class GammaPoint:
    """Cross-derivative data of the inverse map at one evaluation point."""

    pairs: tuple[tuple[int, int], ...]
    gamma: np.ndarray           # (n_pairs, D): second derivatives of the inverse
    kappa: np.ndarray           # (n_pairs, 2D): first-derivative products then gamma
    jacobian: np.ndarray        # J_c at the point
    jacobian_inv: np.ndarray    # J_v = J_c^{-1}
    condition_number: float

    @property
    def gamma_norms(self) -> np.ndarray:
        return np.linalg.norm(self.gamma, axis=1)


def _jacobian_and_hessians(c: Callable[[np.ndarray], np.ndarray],
                           s0: np.ndarray, step: float):
    """Central-difference Jacobian and per-output Hessians of c at s0."""
    s0 = np.asarray(s0, dtype=float)
    d = s0.shape[0]
    f0 = np.asarray(c(s0), dtype=float)
    if f0.shape != (d,):
        raise ValueError("composition must map R^D to R^D")

    plus = np.empty((d, d))
    minus = np.empty((d, d))
    for b in range(d):
        e = np.zeros(d)
        e[b] = step
        plus[b] = c(s0 + e)
        minus[b] = c(s0 - e)
    if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
        raise ValueError("non-finite evaluation near the point")
    jac = (plus - minus).T / (2.0 * step)

    hess = np.zeros((d, d, d))  # hess[a, b, e] = d^2 c_a / ds_b ds_e
    for b in range(d):
        hess[:, b, b] = (plus[b] + minus[b] - 2.0 * f0) / step ** 2
    for b in range(d):
        for e_idx in range(b + 1, d):
            eb = np.zeros(d)
            eb[b] = step
            ee = np.zeros(d)
            ee[e_idx] = step
            val = (np.asarray(c(s0 + eb + ee)) - np.asarray(c(s0 + eb - ee))
                   - np.asarray(c(s0 - eb + ee)) + np.asarray(c(s0 - eb - ee)))
            mixed = val / (4.0 * step * step)
            hess[:, b, e_idx] = mixed
            hess[:, e_idx, b] = mixed
    return jac, hess


def gamma_via_inverse(c: Callable[[np.ndarray], np.ndarray], s0: np.ndarray,
                      step: float = 1e-3, cond_limit: float = 1e8) -> GammaPoint:
    """Cross derivatives of the inverse of c at y0 = c(s0), for all pairs j < k.

    Differentiates the forward composition and applies the inverse-function
    identities: J_v = J_c^{-1} and
    d^2 v_i / dy_j dy_k = - sum_{a,b,e} [J_v]_{i,a} H^a_{b,e} [J_v]_{b,j} [J_v]_{e,k}
    with H^a the Hessian of output a, so no numerical root finding is needed.
    Also returns the first-derivative products that accompany gamma in the
    stacked per-pair vector.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    s0 = np.asarray(s0, dtype=float)
    d = s0.shape[0]
    jac, hess = _jacobian_and_hessians(c, s0, step)
    cond = float(np.linalg.cond(jac))
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditionedPointError(
            f"condition number {cond:.3g} exceeds {cond_limit:.3g}"
        )
    jinv = np.linalg.inv(jac)

    pairs = tuple((j, k) for j in range(d) for k in range(j + 1, d))
    gamma = np.zeros((len(pairs), d))
    kappa = np.zeros((len(pairs), 2 * d))
    for p, (j, k) in enumerate(pairs):
        quad = np.einsum("b,abe,e->a", jinv[:, j], hess, jinv[:, k])
        gamma[p] = -jinv @ quad
        kappa[p, :d] = jinv[:, j] * jinv[:, k]
        kappa[p, d:] = gamma[p]
    return GammaPoint(pairs=pairs, gamma=gamma, kappa=kappa, jacobian=jac,
                      jacobian_inv=jinv, condition_number=cond)


@dataclass
class GammaReport:
    """Per-pair cross-derivative norms aggregated over evaluation points."""

    pairs: tuple[tuple[int, int], ...]
    gamma_norms: np.ndarray           # (n_points_ok, n_pairs)
    mean_norms: np.ndarray            # (n_pairs,)
    permutation_scores: np.ndarray    # (n_points_ok,)
    step: float
    point_indices: list[int]
    skipped: list[int]
    kappas: np.ndarray | None = None  # (n_points_ok, n_pairs, 2D)

    @property
    def mean_permutation_score(self) -> float:
        return float(np.mean(self.permutation_scores))

    @property
    def overall_mean_norm(self) -> float:
        return float(np.mean(self.mean_norms))

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "mean_norms": self.mean_norms.tolist(),
            "overall_mean_norm": self.overall_mean_norm,
            "mean_permutation_score": self.mean_permutation_score,
            "step": self.step,
            "n_points": len(self.point_indices),
            "skipped_points": self.skipped,
            "gamma_norms": self.gamma_norms.tolist(),
        }

    def csv_rows(self):
        """(point_index, j, k, gamma_norm) rows."""
        for row, pt in enumerate(self.point_indices):
            for p, (j, k) in enumerate(self.pairs):
                yield pt, j, k, float(self.gamma_norms[row, p])


def gamma_report(c: Callable[[np.ndarray], np.ndarray], points: np.ndarray,
                 step: float = 1e-3, cond_limit: float = 1e8,
                 keep_kappas: bool = False) -> GammaReport:
    """Evaluate gamma_via_inverse at many points, skipping ill-conditioned ones."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    norms, scores, kept, skipped, kappas = [], [], [], [], []
    pairs = None
    for idx, s0 in enumerate(points):
        try:
            gp = gamma_via_inverse(c, s0, step=step, cond_limit=cond_limit)
        except IllConditionedPointError:
            skipped.append(idx)
            continue
        pairs = gp.pairs
        norms.append(gp.gamma_norms)
        scores.append(jacobian_permutation_score(gp.jacobian_inv))
        kept.append(idx)
        if keep_kappas:
            kappas.append(gp.kappa)
    if not kept:
        raise IllConditionedPointError("every evaluation point was skipped")
    gamma_norms = np.asarray(norms)
    return GammaReport(
        pairs=pairs,
        gamma_norms=gamma_norms,
        mean_norms=gamma_norms.mean(axis=0),
        permutation_scores=np.asarray(scores),
        step=step,
        point_indices=kept,
        skipped=skipped,
        kappas=np.asarray(kappas) if keep_kappas else None,
    )


# --- closed-form bound calculators ------------------------------------------------


@dataclass(frozen=True)
class BoundInputs:
    """Constants entering the finite-sample bounds.

    c_x, c_u bound the observation and auxiliary norms; layer_norms are the
    per-layer Frobenius bounds; nu is the function-class mismatch; c_t bounds
    the fourth derivative of the regression residual; sigma_star is the best
    smallest singular value of the variability matrix.  nu, c_t and
    sigma_star are not observable and are taken as supplied.
    """

    c_x: float
    c_u: float
    layer_norms: tuple[float, ...]
    d: int
    n: int
    delta: float = 0.05
    nu: float = 0.0
    c_t: float = 10.0
    sigma_star: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layer_norms",
                           tuple(float(b) for b in self.layer_norms))
        if min(self.c_x, self.c_u) < 0 or self.nu < 0:
            raise ValueError("c_x, c_u and nu must be >= 0")
        if any(b <= 0 for b in self.layer_norms):
            raise ValueError("layer norms must be positive")
        if self.d < 1 or self.n < 1:
            raise ValueError("d and n must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.c_t <= 0 or self.sigma_star < 0:
            raise ValueError("c_t must be > 0 and sigma_star >= 0")

    @property
    def n_layers(self) -> int:
        return len(self.layer_norms)

    @property
    def norm_product(self) -> float:
        return float(np.prod(self.layer_norms))


def rademacher_bound(inputs: BoundInputs) -> float:
    """Complexity of the composed regression-function class under n samples:
    (c_x prod B + sqrt(D) c_u) * prod B * sqrt(D L / n)."""
    prod_b = inputs.norm_product
    return ((inputs.c_x * prod_b + math.sqrt(inputs.d) * inputs.c_u) * prod_b
            * math.sqrt(inputs.d * inputs.n_layers / inputs.n))


def alpha_bound(inputs: BoundInputs) -> float:
    """Upper bound on |r(z)| over bounded inputs:
    (sqrt(D) c_x prod B + D c_u) * prod B."""
    prod_b = inputs.norm_product
    return (math.sqrt(inputs.d) * inputs.c_x * prod_b
            + inputs.d * inputs.c_u) * prod_b


def rsc_constant(alpha: float) -> float:
    """Strong-convexity modulus of the logistic loss on |r| <= alpha:
    e^alpha / (1 + e^alpha)^2, maximal (1/4) at alpha = 0 and even in alpha."""
    # sigmoid(a) * sigmoid(-a), stable for large |alpha|
    sig = 1.0 / (1.0 + math.exp(-abs(alpha)))
    return sig * (1.0 - sig)


def _softplus(alpha: float) -> float:
    return math.log1p(math.exp(-abs(alpha))) + max(alpha, 0.0)


def generalization_gap_bound(inputs: BoundInputs, rademacher: float) -> float:
    """Expected squared gap between the trained and ideal regression functions:
    (1+e^a)^2/e^a * (2 R_N + nu + 5 c sqrt(2 ln(8/delta) / n)), c = log(1+e^a)."""
    a = alpha_bound(inputs)
    c = _softplus(a)
    prefactor = math.exp(2.0 * _softplus(a) - a)
    tail = 5.0 * c * math.sqrt(2.0 * math.log(8.0 / inputs.delta) / inputs.n)
    return prefactor * (2.0 * rademacher + inputs.nu + tail)


def cross_derivative_bound(inputs: BoundInputs, rademacher: float) -> float:
    """Bound on the expected cross-derivative norm of the inverse map:

    2 D sqrt(3 C_t) (1+e^a)^(1/2) / (3 e^(a/4) sigma*^2)
        * (2 R_N + nu + 5 log(1+e^a) sqrt(2 ln(8/delta) / n))^(1/4).
    """
    if inputs.sigma_star <= 0.0:
        raise VariabilityError("sigma_star must be positive; the auxiliary "
                               "variable provides no variability")
    a = alpha_bound(inputs)
    c = _softplus(a)
    prefactor = (2.0 * inputs.d * math.sqrt(3.0 * inputs.c_t)
                 * math.exp(0.5 * _softplus(a) - 0.25 * a)
                 / (3.0 * inputs.sigma_star ** 2))
    tail = 5.0 * c * math.sqrt(2.0 * math.log(8.0 / inputs.delta) / inputs.n)
    bracket = 2.0 * rademacher + inputs.nu + tail
    return prefactor * bracket ** 0.25


@dataclass(frozen=True)
class BoundReport:
    """All evaluated bound quantities for one set of inputs."""

    rademacher: float
    alpha: float
    rsc: float
    c: float
    epsilon: float
    step: float
    gamma_bound: float
    nu: float
    sigma_star: float
    c_t: float

    def to_dict(self) -> dict:
        return {
            "rademacher_complexity": self.rademacher,
            "alpha": self.alpha,
            "rsc_constant": self.rsc,
            "c_log1p_exp_alpha": self.c,
            "regression_gap_bound": self.epsilon,
            "optimal_step": self.step,
            "cross_derivative_bound": self.gamma_bound,
            "nu": self.nu,
            "sigma_star": self.sigma_star,
            "c_t": self.c_t,
            "note": "conditional on supplied constants (nu, c_t, sigma_star)",
        }


def compute_bound_report(inputs: BoundInputs) -> BoundReport:
    rad = rademacher_bound(inputs)
    a = alpha_bound(inputs)
    eps = generalization_gap_bound(inputs, rad)
    return BoundReport(
        rademacher=rad,
        alpha=a,
        rsc=rsc_constant(a),
        c=_softplus(a),
        epsilon=eps,
        step=optimal_step(eps, inputs.c_t),
        gamma_bound=cross_derivative_bound(inputs, rad),
        nu=inputs.nu,
        sigma_star=inputs.sigma_star,
        c_t=inputs.c_t,
    )


def measured_bound_inputs(model, batch, n: int | None = None,
                          delta: float = 0.05, nu: float = 0.0,
                          c_t: float = 10.0, sigma_star: float = 1.0) -> BoundInputs:
    """BoundInputs from a trained model and its data.

    c_x and c_u are the largest observed row norms; each layer bound is the
    max measured Frobenius norm across the feature network and all heads, so
    alpha_bound dominates every per-network product.
    """
    from .nn import frobenius_norms

    nets = [model.h, *model.phis]
    per_layer = np.array([frobenius_norms(p) for p in nets])
    layer_norms = tuple(np.maximum(per_layer.max(axis=0), 1e-12))
    return BoundInputs(
        c_x=float(np.max(np.linalg.norm(batch.x, axis=1))),
        c_u=float(np.max(np.linalg.norm(batch.u, axis=1))),
        layer_norms=layer_norms,
        d=model.feature_dim,
        n=n if n is not None else batch.n,
        delta=delta,
        nu=nu,
        c_t=c_t,
        sigma_star=sigma_star,
    )
