"""Picard solver for the coupled conditional forward-backward system.

One Picard sweep freezes the adjoint surfaces (p, q) of the previous iterate,
integrates the K+1 forward state equations by explicit Euler (controls are the
projection feedbacks of the frozen adjoints), then solves the K+1 backward
equations by a least-squares conditional-expectation recursion driven by the
fresh states.  The backward recursion resolves its own linear driver terms
node by node (the adjoint drift is inverted implicitly, the martingale
integrand is estimated first), so a sweep is the composition
forward-solve o backward-solve and only the coupling through the controls is
iterated; that composition stays contractive for weak coupling on any
horizon, where freezing the backward driver too would expand early sweeps by
a factor of order (drift norm) x (horizon).  Both variants share the same
discrete fixed point.  The sweep is a deterministic map on the discretized
surfaces, so the iteration either contracts or visibly diverges; convergence
is measured in a sup-plus-integral norm over all components.

Conditional expectations: minor-agent quantities are regressed across the M
particles sharing one common path on the basis {1, own state} (anything
common-path-measurable is absorbed by the intercept); the major agent is
regressed across the P common paths on {1, major state, aggregate field}.
The extra common-noise martingale component of the minor adjoints is
estimated by a pooled cross-path regression and is diagnostic only: it feeds
neither the controls nor any driver.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .convex import WeightedMetric, control_map
from .errors import DivergenceError, StructuralError
from .model import coeff_steps

__all__ = [
    "CCIterate",
    "CCSolution",
    "PicardReport",
    "AgentPath",
    "forward_pass",
    "backward_pass",
    "picard_solve",
    "iterate_distance",
    "hamiltonian_residual",
    "decentralized_strategy",
]


# ---------------------------------------------------------------------------
# materialized per-step coefficients


class _Coeffs:
    """Per-step views of every coefficient on a J-step grid."""

    _MAJOR = {
        "A0": ("n", "n"), "B0": ("n", "m"), "C0": ("n", "n"), "D0": ("n", "m"),
        "F0_1": ("n", "n"), "F0_2": ("n", "n"), "b0": ("n",), "sigma0": ("n",),
    }
    _SHARED = {
        "B": ("n", "m"), "C": ("n", "n"), "F1": ("n", "n"), "F2": ("n", "n"),
        "H": ("n", "n"), "b": ("n",), "sigma": ("n",), "Q0": ("n", "n"), "Q": ("n", "n"),
    }

    def __init__(self, spec, num_steps):
        dims = {"n": spec.n, "m": spec.m}
        for name, shape in {**self._MAJOR, **self._SHARED}.items():
            base = tuple(dims[s] for s in shape)
            setattr(self, name, coeff_steps(getattr(spec, name), base, num_steps))
        self.A = [coeff_steps(spec.A[k], (spec.n, spec.n), num_steps) for k in range(spec.K)]
        self.D = [coeff_steps(spec.D[k], (spec.n, spec.m), num_steps) for k in range(spec.K)]
        r0 = coeff_steps(spec.R0, (spec.m, spec.m), num_steps)
        r_k = [coeff_steps(spec.R[k], (spec.m, spec.m), num_steps) for k in range(spec.K)]
        self.R0 = r0
        self.R = r_k
        self.metric0 = _metric_steps(r0)
        self.metric = [_metric_steps(r_k[k]) for k in range(spec.K)]


def _metric_steps(r_steps):
    # constant weights share one metric object across all steps
    first = WeightedMetric.from_weight(r_steps[0])
    out = [first]
    for j in range(1, r_steps.shape[0]):
        if np.array_equal(r_steps[j], r_steps[j - 1]):
            out.append(out[-1])
        else:
            out.append(WeightedMetric.from_weight(r_steps[j]))
    return out


# ---------------------------------------------------------------------------
# iterate containers


@dataclass(frozen=True)
class CCIterate:
    """Discretized surfaces of one Picard iterate.

    Forward states ``x0`` (P, J+1, n) and ``x`` (P, K, M, J+1, n); adjoints
    ``p0``/``p`` on nodes 0..J; martingale integrands ``q0``/``q``/``q_common``
    on nodes 0..J-1; per-type conditional means and their type-weighted
    aggregate on nodes 0..J.
    """

    x0: np.ndarray
    x: np.ndarray
    cond_mean: np.ndarray
    mean_field: np.ndarray
    p0: np.ndarray
    p: np.ndarray
    q0: np.ndarray
    q: np.ndarray
    q_common: np.ndarray

    @classmethod
    def zeros(cls, spec, ensemble):
        grid = ensemble.grid
        paths, types, parts = ensemble.num_paths, ensemble.num_types, ensemble.particles
        j, n = grid.steps, spec.n
        return cls(
            x0=np.zeros((paths, j + 1, n)),
            x=np.zeros((paths, types, parts, j + 1, n)),
            cond_mean=np.zeros((paths, types, j + 1, n)),
            mean_field=np.zeros((paths, j + 1, n)),
            p0=np.zeros((paths, j + 1, n)),
            p=np.zeros((paths, types, parts, j + 1, n)),
            q0=np.zeros((paths, j, n)),
            q=np.zeros((paths, types, parts, j, n)),
            q_common=np.zeros((paths, types, parts, j, n)),
        )


@dataclass(frozen=True)
class FeedbackSurfaces:
    """Affine conditional-expectation maps recovered from the regressions.

    ``minor_p[k]`` has shape (P, J+1, 1+n, n): row 0 is the intercept, the
    remaining rows act on the agent's own state.  ``major_p`` has shape
    (J+1, 1+2n, n) over the basis {1, major state, aggregate field}.  The q
    surfaces stop at node J-1.
    """

    minor_p: np.ndarray
    minor_q: np.ndarray
    major_p: np.ndarray
    major_q: np.ndarray

    def eval_minor(self, k, path, j, states):
        coef = self.minor_p[k, path, j]
        return coef[0] + states @ coef[1:]

    def eval_minor_q(self, k, path, j, states):
        coef = self.minor_q[k, path, j]
        return coef[0] + states @ coef[1:]

    def eval_major(self, j, state, agg):
        coef = self.major_p[j]
        n = state.shape[-1]
        return coef[0] + state @ coef[1 : 1 + n] + agg @ coef[1 + n :]

    def eval_major_q(self, j, state, agg):
        coef = self.major_q[j]
        n = state.shape[-1]
        return coef[0] + state @ coef[1 : 1 + n] + agg @ coef[1 + n :]


@dataclass(frozen=True)
class PicardReport:
    iterations: int
    deltas: tuple
    ratios: tuple
    converged: bool
    diverged: bool
    final_residual: float
    tol: float
    mean_fallbacks: int
    message: str = ""

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "deltas": list(self.deltas),
            "ratios": list(self.ratios),
            "converged": self.converged,
            "diverged": self.diverged,
            "final_residual": self.final_residual,
            "tol": self.tol,
            "mean_fallbacks": self.mean_fallbacks,
            "message": self.message,
        }


@dataclass(frozen=True)
class CCSolution:
    """Solved consistency system on one noise ensemble."""

    spec: object
    grid: object
    ensemble: object
    iterate: CCIterate
    feedback: FeedbackSurfaces
    report: PicardReport = field(repr=False, default=None)

    def control_surfaces(self):
        """Projection-feedback controls on every node.

        The martingale integrand has no node J; its last value is reused
        there, which only matters for terminal-node quadrature.
        """
        spec, it = self.spec, self.iterate
        num_steps = self.grid.steps
        co = _Coeffs(spec, num_steps)
        paths, types, parts = it.x.shape[0], it.x.shape[1], it.x.shape[2]
        u0 = np.empty((paths, num_steps + 1, spec.m))
        u = np.empty((paths, types, parts, num_steps + 1, spec.m))
        for j in range(num_steps + 1):
            jj = min(j, num_steps - 1)
            q0_j = it.q0[:, jj]
            u0[:, j] = control_map(it.p0[:, j], q0_j, co.B0[jj], co.D0[jj], spec.gamma0, co.metric0[jj])
            for k in range(types):
                u[:, k, :, j] = control_map(
                    it.p[:, k, :, j], it.q[:, k, :, jj], co.B[jj], co.D[k][jj],
                    spec.gamma[k], co.metric[k][jj],
                )
        return u0, u


# ---------------------------------------------------------------------------
# linear conditional-expectation fits


class _FitBasis:
    """Prepared regressor moments for least squares on {1, regressors}.

    Factoring the basis out lets several targets at one node share the
    centered regressors and the (pseudo-)inverted covariance.  Directions of
    the regressor covariance with negligible variance are dropped (their
    slope is zero), which degrades gracefully to a plain mean when all
    particles agree.
    """

    def __init__(self, regressors, scale_hint=1.0):
        regressors = np.asarray(regressors, dtype=float)
        self.batch, self.samples, self.r = regressors.shape
        self.mean_x = regressors.mean(axis=1, keepdims=True)
        self.xc = regressors - self.mean_x
        floor = 1e-24 * (1.0 + scale_hint**2)
        if self.r == 1:
            var = np.einsum("bs,bs->b", self.xc[:, :, 0], self.xc[:, :, 0]) / self.samples
            keep = var > 1e-12 * var + floor
            self.inv_cov = np.where(keep, 1.0 / np.where(keep, var, 1.0), 0.0)[:, None, None]
            self.fallbacks = int(np.sum(~keep))
        else:
            cov = np.einsum("bsi,bsj->bij", self.xc, self.xc) / self.samples
            vals, vecs = np.linalg.eigh(cov)
            keep = vals > 1e-12 * vals[:, -1:] + floor
            inv_vals = np.where(keep, 1.0 / np.where(keep, vals, 1.0), 0.0)
            self.inv_cov = np.einsum("bik,bk,bjk->bij", vecs, inv_vals, vecs)
            self.fallbacks = int(np.sum(~keep))

    def fit(self, targets):
        """Returns (coef, fitted): coef is (B, 1+r, d), intercept first."""
        targets = np.asarray(targets, dtype=float)
        mean_y = targets.mean(axis=1, keepdims=True)
        cxy = np.einsum("bsi,bsd->bid", self.xc, targets - mean_y) / self.samples
        slope = self.inv_cov @ cxy
        fitted = mean_y + np.einsum("bsi,bid->bsd", self.xc, slope)
        coef = np.empty((self.batch, 1 + self.r, targets.shape[-1]))
        coef[:, 0] = (mean_y - self.mean_x @ slope)[:, 0]
        coef[:, 1:] = slope
        return coef, fitted


def _fit_linear(regressors, targets, scale_hint=1.0):
    """One-shot convenience wrapper around :class:`_FitBasis`."""
    basis = _FitBasis(regressors, scale_hint=scale_hint)
    coef, fitted = basis.fit(targets)
    return coef, fitted, basis.fallbacks


# ---------------------------------------------------------------------------
# forward / backward passes


def _check_finite(arr, label, j, per_particle):
    if np.all(np.isfinite(arr)):
        return
    idx = np.argwhere(~np.isfinite(arr))[0]
    if per_particle:
        loc = (int(idx[0]), int(idx[1]), int(idx[2]), j)
        msg = f"{label} became non-finite at path {loc[0]}, type {loc[1]}, particle {loc[2]}, node {j}"
    else:
        loc = (int(idx[0]), None, None, j)
        msg = f"{label} became non-finite at path {loc[0]}, node {j}"
    raise DivergenceError(msg, location=loc)


def forward_pass(spec, ensemble, frozen):
    """Explicit Euler sweep of the K+1 state equations under frozen adjoints."""
    grid = ensemble.grid
    num_steps, dt = grid.steps, grid.dt
    paths, types, parts = ensemble.num_paths, ensemble.num_types, ensemble.particles
    if types != spec.K:
        raise StructuralError("ensemble type count differs from the spec")
    n = spec.n
    co = _Coeffs(spec, num_steps)

    x0 = np.empty((paths, num_steps + 1, n))
    x = np.empty((paths, types, parts, num_steps + 1, n))
    cond = np.empty((paths, types, num_steps + 1, n))
    agg = np.empty((paths, num_steps + 1, n))
    x0[:, 0] = spec.x0_init
    x[:, :, :, 0] = spec.x_init

    for j in range(num_steps):
        cond[:, :, j] = x[:, :, :, j].mean(axis=2)
        agg[:, j] = np.einsum("k,pkn->pn", spec.pi, cond[:, :, j])
        u0 = control_map(frozen.p0[:, j], frozen.q0[:, j], co.B0[j], co.D0[j], spec.gamma0, co.metric0[j])
        drift0 = x0[:, j] @ co.A0[j].T + u0 @ co.B0[j].T + agg[:, j] @ co.F0_1[j].T + co.b0[j]
        diff0 = x0[:, j] @ co.C0[j].T + u0 @ co.D0[j].T + agg[:, j] @ co.F0_2[j].T + co.sigma0[j]
        x0[:, j + 1] = x0[:, j] + drift0 * dt + diff0 * ensemble.dw_common[:, j, None]
        _check_finite(x0[:, j + 1], "major state", j + 1, per_particle=False)
        for k in range(types):
            u = control_map(
                frozen.p[:, k, :, j], frozen.q[:, k, :, j], co.B[j], co.D[k][j],
                spec.gamma[k], co.metric[k][j],
            )
            drift = (
                x[:, k, :, j] @ co.A[k][j].T + u @ co.B[j].T
                + agg[:, j, None] @ co.F1[j].T + co.b[j]
            )
            diff = (
                x[:, k, :, j] @ co.C[j].T + u @ co.D[k][j].T
                + agg[:, j, None] @ co.F2[j].T + x0[:, j, None] @ co.H[j].T + co.sigma[j]
            )
            x[:, k, :, j + 1] = x[:, k, :, j] + drift * dt + diff * ensemble.dw_minor[:, k, :, j, None]
        _check_finite(x[:, :, :, j + 1], "minor state", j + 1, per_particle=True)
    cond[:, :, num_steps] = x[:, :, :, num_steps].mean(axis=2)
    agg[:, num_steps] = np.einsum("k,pkn->pn", spec.pi, cond[:, :, num_steps])
    return replace(frozen, x0=x0, x=x, cond_mean=cond, mean_field=agg)


def backward_pass(spec, ensemble, iterate):
    """Least-squares backward recursion; driver adjoints stay frozen.

    Returns the updated iterate together with the affine feedback surfaces of
    the regressions and the number of dropped (rank-deficient) directions.
    """
    grid = ensemble.grid
    num_steps, dt = grid.steps, grid.dt
    paths, types, parts = ensemble.num_paths, ensemble.num_types, ensemble.particles
    n = spec.n
    co = _Coeffs(spec, num_steps)
    x0, x = iterate.x0, iterate.x
    agg = iterate.mean_field

    p0 = np.empty_like(iterate.p0)
    p = np.empty_like(iterate.p)
    q0 = np.empty_like(iterate.q0)
    q = np.empty_like(iterate.q)
    q_common = np.empty_like(iterate.q_common)
    minor_coef_p = np.zeros((types, paths, num_steps + 1, 1 + n, n))
    minor_coef_q = np.zeros((types, paths, num_steps, 1 + n, n))
    major_coef_p = np.zeros((num_steps + 1, 1 + 2 * n, n))
    major_coef_q = np.zeros((num_steps, 1 + 2 * n, n))
    fallbacks = 0

    # terminal conditions, exact given the discrete aggregate field
    g0, g = spec.G0, spec.G
    p0[:, -1] = -(x0[:, -1] - spec.rho0 * agg[:, -1]) @ g0.T
    major_coef_p[-1, 1 : 1 + n] = -g0.T
    major_coef_p[-1, 1 + n :] = spec.rho0 * g0.T
    shift = spec.rho * agg[:, None, -1] + (1.0 - spec.rho) * x0[:, None, -1]
    for k in range(types):
        p[:, k, :, -1] = -(x[:, k, :, -1] - shift) @ g.T
        minor_coef_p[k, :, -1, 0] = shift[:, 0] @ g.T
        minor_coef_p[k, :, -1, 1:] = -g.T

    eye = np.eye(n)
    for j in range(num_steps - 1, -1, -1):
        # minor equations: cross-sectional regression within each common path
        for k in range(types):
            hint = float(np.mean(np.abs(x[:, k, :, j])))
            basis_k = _FitBasis(x[:, k, :, j], scale_hint=hint)
            pooled = _FitBasis(x[:, k, :, j].reshape(1, paths * parts, n), scale_hint=hint)
            fallbacks += basis_k.fallbacks
            # martingale integrands with the fitted continuation as control
            # variate: a basis-measurable shift leaves the conditional
            # expectation unchanged and removes the O(1/sqrt(M dt)) noise
            _, cont = basis_k.fit(p[:, k, :, j + 1])
            resid = p[:, k, :, j + 1] - cont
            target_q = resid * (ensemble.dw_minor[:, k, :, j, None] / dt)
            coef_q, fitted = basis_k.fit(target_q)
            minor_coef_q[k, :, j] = coef_q
            q[:, k, :, j] = fitted
            # adjoint node value: the linear drift in the adjoint itself is
            # inverted rather than frozen, which keeps long horizons stable
            source = x[:, k, :, j] - spec.rho * agg[:, j, None] - (1.0 - spec.rho) * x0[:, j, None]
            explicit = p[:, k, :, j + 1] + dt * (q[:, k, :, j] @ co.C[j] - source @ co.Q[j].T)
            coef, fitted = basis_k.fit(explicit)
            solve_t = np.linalg.inv(eye - dt * co.A[k][j].T).T
            minor_coef_p[k, :, j] = coef @ solve_t
            p[:, k, :, j] = fitted @ solve_t
            # pooled cross-path estimate of the common-noise martingale part
            target_qc = resid * (ensemble.dw_common[:, None, j, None] / dt)
            _, fitted = pooled.fit(target_qc.reshape(1, paths * parts, n))
            q_common[:, k, :, j] = fitted.reshape(paths, parts, n)
        # major equation: regression across common paths
        basis = np.concatenate([x0[:, j], agg[:, j]], axis=1)[None]
        hint0 = float(np.mean(np.abs(basis)))
        basis0 = _FitBasis(basis, scale_hint=hint0)
        fallbacks += basis0.fallbacks
        _, cont0 = basis0.fit(p0[:, j + 1][None])
        target_q0 = ((p0[:, j + 1] - cont0[0]) * (ensemble.dw_common[:, j, None] / dt))[None]
        coef_q0, fitted = basis0.fit(target_q0)
        major_coef_q[j] = coef_q0[0]
        q0[:, j] = fitted[0]
        source0 = x0[:, j] - spec.rho0 * agg[:, j]
        explicit0 = p0[:, j + 1] + dt * (q0[:, j] @ co.C0[j] - source0 @ co.Q0[j].T)
        coef, fitted = basis0.fit(explicit0[None])
        solve0_t = np.linalg.inv(eye - dt * co.A0[j].T).T
        major_coef_p[j] = coef[0] @ solve0_t
        p0[:, j] = fitted[0] @ solve0_t
        _check_finite(p0[:, j], "major adjoint", j, per_particle=False)
        _check_finite(p[:, :, :, j], "minor adjoint", j, per_particle=True)

    new_iter = replace(iterate, p0=p0, p=p, q0=q0, q=q, q_common=q_common)
    feedback = FeedbackSurfaces(
        minor_p=minor_coef_p, minor_q=minor_coef_q,
        major_p=major_coef_p, major_q=major_coef_q,
    )
    return new_iter, feedback, fallbacks


def iterate_distance(a, b, dt):
    """Distance of two iterates' backward surfaces.

    Square root of: sup over nodes of the summed component means of the
    squared adjoint differences, plus dt-weighted sums over the martingale
    integrands (including the diagnostic common-noise component).
    """
    node = np.mean(np.sum((a.p0 - b.p0) ** 2, axis=-1), axis=0)
    node = node + np.sum(np.mean(np.sum((a.p - b.p) ** 2, axis=-1), axis=(0, 2)), axis=0)
    sup_term = float(np.max(node))
    int_term = dt * float(np.sum(np.mean(np.sum((a.q0 - b.q0) ** 2, axis=-1), axis=0)))
    int_term += dt * float(
        np.sum(np.mean(np.sum((a.q - b.q) ** 2, axis=-1), axis=(0, 2)))
    )
    int_term += dt * float(
        np.sum(np.mean(np.sum((a.q_common - b.q_common) ** 2, axis=-1), axis=(0, 2)))
    )
    return float(np.sqrt(sup_term + int_term))


def picard_solve(spec, ensemble, tol=1e-7, max_iter=40):
    """Iterate forward/backward sweeps from the zero adjoint surfaces.

    Never raises on divergence or stagnation: the report carries what
    happened, and the solution (when one exists) is the last completed
    iterate.
    """
    grid = ensemble.grid
    frozen = CCIterate.zeros(spec, ensemble)
    deltas = []
    converged = False
    diverged = False
    message = ""
    feedback = None
    fallbacks_total = 0
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        try:
            fwd = forward_pass(spec, ensemble, frozen)
            new_iter, feedback, fb = backward_pass(spec, ensemble, fwd)
        except DivergenceError as exc:
            diverged = True
            message = str(exc)
            iterations -= 1
            break
        fallbacks_total += fb
        deltas.append(iterate_distance(new_iter, frozen, grid.dt))
        frozen = new_iter
        if deltas[-1] <= tol:
            converged = True
            break
        if not np.isfinite(deltas[-1]):
            diverged = True
            message = "iterate distance became non-finite"
            break
    ratios = tuple(
        deltas[i + 1] / deltas[i] for i in range(len(deltas) - 1) if deltas[i] > 0.0
    )
    report = PicardReport(
        iterations=iterations,
        deltas=tuple(deltas),
        ratios=ratios,
        converged=converged,
        diverged=diverged,
        final_residual=deltas[-1] if deltas else float("inf"),
        tol=tol,
        mean_fallbacks=fallbacks_total,
        message=message,
    )
    solution = None
    if feedback is not None and not diverged:
        solution = CCSolution(
            spec=spec, grid=grid, ensemble=ensemble, iterate=frozen,
            feedback=feedback, report=report,
        )
    return solution, report


# ---------------------------------------------------------------------------
# optimality diagnostics and decentralized strategies


def hamiltonian_residual(solution, spec, samples=10_000, seed=0):
    """Largest sampled violation of the first-order variational inequality.

    Samples (node, particle, feasible control) triples for both agent classes
    and evaluates <B'p + D'q - R u*, u - u*>; nonpositive up to rounding when
    u* is the projected feedback.
    """
    rng = np.random.default_rng(seed)
    it = solution.iterate
    grid = solution.grid
    num_steps = grid.steps
    co = _Coeffs(spec, num_steps)
    paths, types, parts = it.x.shape[0], it.x.shape[1], it.x.shape[2]
    worst = -np.inf
    per_class = max(1, samples // (types + 1))

    def batch_residual(p_vals, q_vals, b_mat, d_mat, r_mat, gamma, metric, count):
        nonlocal worst
        raw = (p_vals @ b_mat + q_vals @ d_mat) @ metric.inv
        u_star = gamma.project(raw, metric)
        grad = (raw - u_star) @ r_mat  # equals B'p + D'q - R u*
        scale = 1.0 + np.linalg.norm(raw, axis=-1)
        trials = gamma.sample_feasible(rng, count, scale=float(np.mean(scale)))
        picks = rng.integers(0, u_star.shape[0], size=count)
        vals = np.einsum("ci,ci->c", grad[picks], trials - u_star[picks])
        worst = max(worst, float(np.max(vals)))

    node_draw = rng.integers(0, num_steps, size=per_class)
    for j in np.unique(node_draw):
        count = int(np.sum(node_draw == j)) * 4
        batch_residual(
            it.p0[:, j], it.q0[:, j], co.B0[j], co.D0[j], co.R0[j],
            spec.gamma0, co.metric0[j], count,
        )
        for k in range(types):
            pk = it.p[:, k, :, j].reshape(-1, spec.n)
            qk = it.q[:, k, :, j].reshape(-1, spec.n)
            batch_residual(
                pk, qk, co.B[j], co.D[k][j], co.R[k][j],
                spec.gamma[k], co.metric[k][j], count,
            )
    del paths, parts
    return worst


@dataclass(frozen=True)
class AgentPath:
    """One agent's limiting trajectory under the decentralized feedback."""

    x: np.ndarray
    p: np.ndarray
    q: np.ndarray
    u: np.ndarray


def decentralized_strategy(spec, solution, kind, path_index, dw_agent=None):
    """Simulate the limiting trajectory of one agent (or a batch of them).

    ``kind`` is ``"major"`` or a minor type index.  Minor agents need their
    own increments ``dw_agent`` of shape (..., J); the aggregate field and the
    limiting major state are frozen at the solved surfaces of the chosen
    common path.  Controls are the projection feedbacks evaluated on the
    agent's own state, so they are admissible by construction.
    """
    it = solution.iterate
    grid = solution.grid
    num_steps, dt = grid.steps, grid.dt
    n = spec.n
    co = _Coeffs(spec, num_steps)
    fb = solution.feedback
    agg = it.mean_field[path_index]

    if kind == "major":
        dw = solution.ensemble.dw_common[path_index] if dw_agent is None else dw_agent
        x = np.empty((num_steps + 1, n))
        p = np.empty((num_steps + 1, n))
        q = np.empty((num_steps, n))
        u = np.empty((num_steps + 1, spec.m))
        x[0] = spec.x0_init
        for j in range(num_steps):
            p[j] = fb.eval_major(j, x[j], agg[j])
            q[j] = fb.eval_major_q(j, x[j], agg[j])
            u[j] = control_map(p[j], q[j], co.B0[j], co.D0[j], spec.gamma0, co.metric0[j])
            drift = co.A0[j] @ x[j] + co.B0[j] @ u[j] + co.F0_1[j] @ agg[j] + co.b0[j]
            diff = co.C0[j] @ x[j] + co.D0[j] @ u[j] + co.F0_2[j] @ agg[j] + co.sigma0[j]
            x[j + 1] = x[j] + drift * dt + diff * dw[j]
        p[num_steps] = fb.eval_major(num_steps, x[num_steps], agg[num_steps])
        u[num_steps] = control_map(
            p[num_steps], q[num_steps - 1], co.B0[num_steps - 1], co.D0[num_steps - 1],
            spec.gamma0, co.metric0[num_steps - 1],
        )
        return AgentPath(x=x, p=p, q=q, u=u)

    k = int(kind)
    dw = np.atleast_2d(np.asarray(dw_agent, dtype=float))
    agents = dw.shape[0]
    if dw.shape[1] != num_steps:
        raise StructuralError("agent increments do not match the grid")
    x0_path = it.x0[path_index]
    x = np.empty((agents, num_steps + 1, n))
    p = np.empty((agents, num_steps + 1, n))
    q = np.empty((agents, num_steps, n))
    u = np.empty((agents, num_steps + 1, spec.m))
    x[:, 0] = spec.x_init
    for j in range(num_steps):
        p[:, j] = fb.eval_minor(k, path_index, j, x[:, j])
        q[:, j] = fb.eval_minor_q(k, path_index, j, x[:, j])
        u[:, j] = control_map(p[:, j], q[:, j], co.B[j], co.D[k][j], spec.gamma[k], co.metric[k][j])
        drift = x[:, j] @ co.A[k][j].T + u[:, j] @ co.B[j].T + agg[j] @ co.F1[j].T + co.b[j]
        diff = (
            x[:, j] @ co.C[j].T + u[:, j] @ co.D[k][j].T
            + agg[j] @ co.F2[j].T + x0_path[j] @ co.H[j].T + co.sigma[j]
        )
        x[:, j + 1] = x[:, j] + drift * dt + diff * dw[:, j, None]
    p[:, num_steps] = fb.eval_minor(k, path_index, num_steps, x[:, num_steps])
    u[:, num_steps] = control_map(
        p[:, num_steps], q[:, num_steps - 1], co.B[num_steps - 1], co.D[k][num_steps - 1],
        spec.gamma[k], co.metric[k][num_steps - 1],
    )
    return AgentPath(x=x, p=p, q=q, u=u)
