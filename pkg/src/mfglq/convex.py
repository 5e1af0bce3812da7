"""Closed convex control-constraint sets and nearest-point maps in a weighted metric.

A constraint set is one of: the full space, a box, the nonnegative orthant,
a linear subspace {u : U u = 0}, or a polyhedral cone {u : U u <= 0}.  All
sets contain the origin, so an admissible control always exists.  Projections
minimize ||x - y||_R for a symmetric positive-definite weight R; the result is
characterized by the variational inequality <R(x - Px), y - Px> <= 0 for every
feasible y, which is also the certificate every algorithm here is tested
against.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError, NumericError, StructuralError

_PG_MAX_ITER = 10_000
_PG_TOL = 1e-10
_ACTIVE_SET_MAX_ROWS = 12


@dataclass(frozen=True)
class WeightedMetric:
    """Symmetric PD weight R with its Cholesky factor and inverse.

    ``norm_sq(x)`` evaluates <Rx, x>; the factor satisfies R = L L'.
    """

    weight: np.ndarray
    chol: np.ndarray
    inv: np.ndarray
    cond: float

    @classmethod
    def from_weight(cls, weight):
        weight = np.asarray(weight, dtype=float)
        if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
            raise StructuralError(f"metric weight must be square, got {weight.shape}")
        if not np.allclose(weight, weight.T, atol=1e-12):
            raise MetricError("metric weight is not symmetric")
        try:
            chol = np.linalg.cholesky(weight)
        except np.linalg.LinAlgError as exc:
            raise MetricError(f"metric weight is not positive definite: {exc}") from exc
        eigs = np.linalg.eigvalsh(weight)
        return cls(
            weight=weight,
            chol=chol,
            inv=np.linalg.inv(weight),
            cond=float(eigs[-1] / eigs[0]),
        )

    @property
    def dim(self):
        return self.weight.shape[0]

    @property
    def is_diagonal(self):
        off = self.weight - np.diag(np.diag(self.weight))
        return bool(np.all(off == 0.0))

    def norm_sq(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.weight, x)

    def norm(self, x):
        return np.sqrt(self.norm_sq(x))


def _as_batch(x, m):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m:
        raise StructuralError(f"point dimension {x.shape[-1]} != set dimension {m}")
    squeeze = x.ndim == 1
    return x.reshape(-1, m), x.shape, squeeze


class FullSpace:
    """No constraint: projection is the identity."""

    variant = "full_space"

    def __init__(self, dim):
        self.dim = int(dim)

    def project(self, x, metric):
        return np.asarray(x, dtype=float).copy()

    def contains(self, y, tol=1e-10):
        return np.ones(np.asarray(y).shape[:-1], dtype=bool)

    def sample_feasible(self, rng, count, scale=1.0):
        return rng.normal(scale=scale, size=(count, self.dim))

    def violation(self, y):
        return 0.0

    def params(self):
        return {"variant": self.variant, "dim": self.dim}


class NonnegativeOrthant:
    """u >= 0 componentwise."""

    variant = "nonnegative_orthant"

    def __init__(self, dim):
        self.dim = int(dim)

    def project(self, x, metric):
        if metric.is_diagonal:
            return np.maximum(np.asarray(x, dtype=float), 0.0)
        return _projected_gradient_box(x, metric, np.zeros(self.dim), np.full(self.dim, np.inf))

    def contains(self, y, tol=1e-10):
        return np.all(np.asarray(y) >= -tol, axis=-1)

    def sample_feasible(self, rng, count, scale=1.0):
        return np.abs(rng.normal(scale=scale, size=(count, self.dim)))

    def violation(self, y):
        return float(max(0.0, -np.min(y)))

    def params(self):
        return {"variant": self.variant, "dim": self.dim}


class Box:
    """lower <= u <= upper componentwise; infinite bounds allowed; contains 0."""

    variant = "box"

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise StructuralError("box bounds must be 1-d arrays of equal length")
        if np.any(self.lower > self.upper):
            raise StructuralError("box has lower > upper")
        if np.any(self.lower > 0.0) or np.any(self.upper < 0.0):
            raise StructuralError("box must contain the origin")
        self.dim = self.lower.shape[0]

    def project(self, x, metric):
        if metric.is_diagonal:
            return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        return _projected_gradient_box(x, metric, self.lower, self.upper)

    def contains(self, y, tol=1e-10):
        y = np.asarray(y)
        return np.all((y >= self.lower - tol) & (y <= self.upper + tol), axis=-1)

    def sample_feasible(self, rng, count, scale=1.0):
        return np.clip(rng.normal(scale=scale, size=(count, self.dim)), self.lower, self.upper)

    def violation(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore"):
            lo = np.where(np.isfinite(self.lower), self.lower - y, -np.inf)
            hi = np.where(np.isfinite(self.upper), y - self.upper, -np.inf)
        return float(max(0.0, np.max(lo), np.max(hi)))

    def params(self):
        return {"variant": self.variant, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class LinearSubspace:
    """{u : U u = 0} for a full-row-rank matrix U."""

    variant = "linear_subspace"

    def __init__(self, mat):
        self.mat = np.atleast_2d(np.asarray(mat, dtype=float))
        r, m = self.mat.shape
        if r > m or np.linalg.matrix_rank(self.mat) < r:
            raise StructuralError("subspace matrix must have full row rank")
        self.dim = m

    def projector(self, metric):
        # P = I - R^{-1} U' (U R^{-1} U')^{-1} U, the R-orthogonal map onto ker U
        u = self.mat
        ru = metric.inv @ u.T
        core = np.linalg.solve(u @ ru, u)
        return np.eye(self.dim) - ru @ core

    def project(self, x, metric):
        flat, shape, squeeze = _as_batch(x, self.dim)
        out = flat @ self.projector(metric).T
        return out[0] if squeeze else out.reshape(shape)

    def contains(self, y, tol=1e-10):
        y = np.asarray(y)
        res = np.einsum("rj,...j->...r", self.mat, y)
        return np.all(np.abs(res) <= tol * (1.0 + np.abs(y).sum(axis=-1, keepdims=True)), axis=-1)

    def sample_feasible(self, rng, count, scale=1.0):
        g = rng.normal(scale=scale, size=(count, self.dim))
        return g - g @ (np.linalg.pinv(self.mat) @ self.mat).T

    def violation(self, y):
        return float(np.max(np.abs(self.mat @ np.asarray(y, dtype=float))))

    def params(self):
        return {"variant": self.variant, "mat": self.mat.tolist()}


class HalfspaceCone:
    """{u : U u <= 0}, a closed convex cone.

    Projection by active-set enumeration: every subset S of rows defines a
    candidate (project onto {U_S u = 0} in the R metric); the unique candidate
    with feasible primal and nonnegative multipliers is the projection.
    """

    variant = "halfspace_cone"

    def __init__(self, mat):
        self.mat = np.atleast_2d(np.asarray(mat, dtype=float))
        r, m = self.mat.shape
        if r > _ACTIVE_SET_MAX_ROWS:
            raise StructuralError(f"halfspace cone supports at most {_ACTIVE_SET_MAX_ROWS} rows")
        if np.any(np.linalg.norm(self.mat, axis=1) == 0.0):
            raise StructuralError("halfspace cone has a zero row")
        self.dim = m

    def project(self, x, metric):
        flat, shape, squeeze = _as_batch(x, self.dim)
        out = _active_set_cone(flat, self.mat, metric)
        return out[0] if squeeze else out.reshape(shape)

    def contains(self, y, tol=1e-10):
        y = np.asarray(y)
        res = np.einsum("rj,...j->...r", self.mat, y)
        return np.all(res <= tol * (1.0 + np.abs(y).sum(axis=-1, keepdims=True)), axis=-1)

    def sample_feasible(self, rng, count, scale=1.0):
        g = rng.normal(scale=scale, size=(2 * count, self.dim))
        g = np.concatenate([g, -g, np.zeros((1, self.dim))])
        ok = np.all(g @ self.mat.T <= 0.0, axis=1)
        picked = g[ok][:count]
        if picked.shape[0] < count:
            pad = np.zeros((count - picked.shape[0], self.dim))
            picked = np.concatenate([picked, pad])
        return picked

    def violation(self, y):
        return float(max(0.0, np.max(self.mat @ np.asarray(y, dtype=float))))

    def params(self):
        return {"variant": self.variant, "mat": self.mat.tolist()}


ConstraintSet = (FullSpace, NonnegativeOrthant, Box, LinearSubspace, HalfspaceCone)


def _projected_gradient_box(x, metric, lower, upper, tol=_PG_TOL, max_iter=_PG_MAX_ITER):
    """Minimize ||y - x||_R^2 over a box by projected gradient with Armijo steps."""
    m = metric.dim
    flat, shape, squeeze = _as_batch(x, m)
    weight = metric.weight
    eigs = np.linalg.eigvalsh(weight)
    step0 = 2.0 / (eigs[0] + eigs[-1])
    y = np.clip(flat, lower, upper)
    extent = 1.0 + np.linalg.norm(flat, axis=1)
    scale = tol * extent
    f = 0.5 * np.einsum("bi,ij,bj->b", y - flat, weight, y - flat)
    active = np.ones(y.shape[0], dtype=bool)
    for _ in range(max_iter):
        grad = (y - flat) @ weight
        res = _box_vi_residual(-grad, y, lower, upper, ref_extent=extent)
        # freeze converged points so results do not depend on batch composition
        active &= res > scale
        if not np.any(active):
            break
        step = np.full(y.shape[0], step0)
        # Armijo backtracking, vectorized over the batch; the slack absorbs
        # ulp-level noise in f so the step cannot collapse near the optimum
        slack = 1e-13 * (1.0 + np.abs(f))
        for _ in range(60):
            cand = np.clip(y - step[:, None] * grad, lower, upper)
            f_cand = 0.5 * np.einsum("bi,ij,bj->b", cand - flat, weight, cand - flat)
            decrease = np.einsum("bi,bi->b", grad, cand - y)
            ok = f_cand <= f + 0.5 * decrease + slack
            if np.all(ok):
                break
            step = np.where(ok, step, step / 2.0)
        y = np.where(active[:, None], cand, y)
        f = np.where(active, f_cand, f)
    else:
        raise NumericError(
            f"box projection did not converge; max residual {float(np.max(res[active])):.3e}"
        )
    return y[0] if squeeze else y.reshape(shape)


def _box_vi_residual(g, y, lower, upper, ref_extent=1.0):
    """max over feasible z of <g, z - y>, in closed form for a box.

    Unbounded directions are scored at the reference extent so roundoff-level
    gradients do not produce an infinite residual.
    """
    if np.ndim(ref_extent):
        ref_extent = np.asarray(ref_extent)[:, None]
    with np.errstate(invalid="ignore"):
        ext_up = np.where(np.isfinite(upper), upper - y, ref_extent)
        ext_dn = np.where(np.isfinite(lower), lower - y, -ref_extent)
        up = np.where(g > 0.0, g * ext_up, 0.0)
        dn = np.where(g < 0.0, g * ext_dn, 0.0)
    return np.max(up + dn, axis=-1)


def _active_set_cone(flat, mat, metric):
    r = mat.shape[0]
    b, m = flat.shape
    best = flat.copy()
    best_obj = np.full(b, np.inf)
    feas_tol = 1e-10 * (1.0 + np.abs(flat).sum(axis=1))
    for mask_bits in range(2**r):
        rows = [i for i in range(r) if mask_bits >> i & 1]
        if not rows:
            cand = flat
            lam_ok = np.ones(b, dtype=bool)
        else:
            sub = mat[rows]
            ru = metric.inv @ sub.T
            gram = sub @ ru
            try:
                core = np.linalg.solve(gram, sub)
            except np.linalg.LinAlgError:
                continue
            cand = flat - flat @ core.T @ ru.T
            lam = flat @ core.T
            lam_ok = np.all(lam >= -feas_tol[:, None], axis=1)
        slack = cand @ mat.T
        prim_ok = np.all(slack <= feas_tol[:, None], axis=1)
        obj = np.einsum("bi,ij,bj->b", cand - flat, metric.weight, cand - flat)
        take = lam_ok & prim_ok & (obj < best_obj)
        best[take] = cand[take]
        best_obj[take] = obj[take]
    if np.any(~np.isfinite(best_obj)):
        raise NumericError("cone projection found no KKT-consistent active set")
    return best


def project(x, gamma, metric):
    """Nearest point of ``gamma`` to ``x`` in the metric ||.||_R.

    Accepts a single m-vector or any batch with trailing axis m.
    """
    return gamma.project(x, metric)


def control_map(p, q, b_mat, d_mat, gamma, metric):
    """Feedback P_Gamma[R^{-1}(B'p + D'q)] used by both agent classes.

    ``p`` and ``q`` may be batched with trailing axis n; B and D are n x m.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    raw = (p @ np.asarray(b_mat, dtype=float) + q @ np.asarray(d_mat, dtype=float)) @ metric.inv
    return gamma.project(raw, metric)


def variational_residual(x, px, gamma, metric, samples=256, seed=0):
    """max over sampled feasible y of <R(x - px), y - px>.

    Nonpositive (up to rounding) iff ``px`` is the projection of ``x``.  A
    claimed projection that is itself infeasible is reported through its
    feasibility defect, so the residual is positive for any wrong answer.
    """
    x = np.asarray(x, dtype=float)
    px = np.asarray(px, dtype=float)
    rng = np.random.default_rng(seed)
    scale = 1.0 + float(np.linalg.norm(x))
    ys = gamma.sample_feasible(rng, samples, scale=scale)
    ys = np.concatenate([ys, np.zeros((1, x.shape[-1]))])
    g = metric.weight @ (x - px)
    vi = float(np.max((ys - px) @ g))
    return max(vi, gamma.violation(px))
