"""Game specifications, their validation, and block-matrix transforms.

A :class:`ModelSpec` collects every coefficient of one game instance: the
major agent's dynamics, K classes of minor-agent dynamics, quadratic costs,
control-constraint sets, and the type distribution.  Coefficients subject to
an L-infinity bound may be constant or piecewise-constant on the solver grid
(one value per time step, shape ``(J,) + base_shape``); terminal weights,
mixing parameters, and initial states are constants.

:func:`build_stacked` assembles the block matrices of the joint
forward-backward system over all K+1 agent classes and the derived spectral
and Frobenius-norm scalars consumed by the well-posedness checkers.
"""

from dataclasses import dataclass, field

import numpy as np

from .convex import WeightedMetric
from .errors import NumericError, StructuralError

# ---------------------------------------------------------------------------
# piecewise-constant coefficient helpers


def coeff_array(value, base_shape):
    """Normalize a coefficient to float64 and check its base shape.

    Returns an array of shape ``base_shape`` (constant) or ``(J,) + base_shape``
    (piecewise-constant, one value per step interval).
    """
    arr = np.asarray(value, dtype=float)
    if arr.shape == base_shape:
        return arr
    if arr.ndim == len(base_shape) + 1 and arr.shape[1:] == base_shape:
        return arr
    raise StructuralError(f"coefficient has shape {arr.shape}, expected {base_shape} or (J,)+{base_shape}")


def is_time_varying(arr, base_shape):
    return arr.shape != tuple(base_shape)


def coeff_steps(arr, base_shape, num_steps):
    """View of the coefficient as one value per step, shape (J,)+base_shape."""
    if not is_time_varying(arr, base_shape):
        return np.broadcast_to(arr, (num_steps,) + tuple(base_shape))
    if arr.shape[0] != num_steps:
        raise StructuralError(
            f"piecewise coefficient has {arr.shape[0]} steps but the grid has {num_steps}"
        )
    return arr


def coeff_norm(arr, base_shape):
    """Frobenius norm; for piecewise coefficients, the max over steps (the L-inf bound)."""
    if is_time_varying(arr, base_shape):
        return float(np.max(np.sqrt(np.sum(arr.reshape(arr.shape[0], -1) ** 2, axis=1))))
    return float(np.linalg.norm(arr))


def _slices(arr, base_shape):
    if is_time_varying(arr, base_shape):
        return arr
    return arr[None]


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """All coefficients, costs, constraints, and type weights of one game."""

    n: int
    m: int
    K: int
    T: float
    # major dynamics
    A0: np.ndarray
    B0: np.ndarray
    C0: np.ndarray
    D0: np.ndarray
    F0_1: np.ndarray
    F0_2: np.ndarray
    b0: np.ndarray
    sigma0: np.ndarray
    # minor dynamics: per-type A_k, D_k stacked on a leading K axis; shared rest
    A: np.ndarray
    D: np.ndarray
    B: np.ndarray
    C: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    H: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    # costs
    Q0: np.ndarray
    R0: np.ndarray
    G0: np.ndarray
    rho0: float
    Q: np.ndarray
    R: np.ndarray
    G: np.ndarray
    rho: float
    # constraints and population
    gamma0: object
    gamma: tuple
    pi: np.ndarray
    x0_init: np.ndarray
    x_init: np.ndarray

    def __post_init__(self):
        n, m, K = self.n, self.m, self.K
        if n < 1 or m < 1 or K < 1 or not self.T > 0:
            raise StructuralError("need n, m, K >= 1 and T > 0")
        conv = {
            "A0": (n, n), "C0": (n, n), "F0_1": (n, n), "F0_2": (n, n),
            "B0": (n, m), "D0": (n, m), "b0": (n,), "sigma0": (n,),
            "B": (n, m), "C": (n, n), "F1": (n, n), "F2": (n, n), "H": (n, n),
            "b": (n,), "sigma": (n,),
            "Q0": (n, n), "R0": (m, m), "Q": (n, n),
        }
        for name, shape in conv.items():
            object.__setattr__(self, name, coeff_array(getattr(self, name), shape))
        for name, shape in {"A": (n, n), "D": (n, m), "R": (m, m)}.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape[0] != K:
                raise StructuralError(f"{name} must carry one entry per type, got shape {arr.shape}")
            object.__setattr__(
                self, name, np.stack([coeff_array(arr[k], shape) for k in range(K)])
            )
        for name, shape in {"G0": (n, n), "G": (n, n), "x0_init": (n,), "x_init": (n,)}.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise StructuralError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        pi = np.asarray(self.pi, dtype=float)
        if pi.shape != (K,):
            raise StructuralError(f"pi must have {K} entries")
        object.__setattr__(self, "pi", pi)
        if len(self.gamma) != K:
            raise StructuralError("need one constraint set per minor type")
        object.__setattr__(self, "gamma", tuple(self.gamma))
        for g in (self.gamma0, *self.gamma):
            if getattr(g, "dim", m) != m:
                raise StructuralError("constraint set dimension differs from control dimension")

    # -- per-type views -----------------------------------------------------
    def a_of(self, k):
        return self.A[k]

    def d_of(self, k):
        return self.D[k]

    def r_of(self, k):
        return self.R[k]

    def metric0(self):
        return WeightedMetric.from_weight(_constant_matrix(self.R0, (self.m, self.m), "R0"))

    def metric_of(self, k):
        return WeightedMetric.from_weight(_constant_matrix(self.R[k], (self.m, self.m), "R"))


def _constant_matrix(arr, base_shape, name):
    """Matrices used as algebraic weights must be constant in time."""
    if is_time_varying(arr, base_shape):
        raise StructuralError(f"{name} must be constant in time for this operation")
    return arr


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple

    @property
    def ok(self):
        return not self.violations

    def __iter__(self):
        return iter(self.violations)


def _check_sym_psd(arr, base_shape, name, out, strict=False):
    for sl in _slices(arr, base_shape):
        if not np.allclose(sl, sl.T, atol=1e-10):
            out.append(f"{name} not symmetric")
            return
        eigs = np.linalg.eigvalsh(0.5 * (sl + sl.T))
        if strict and eigs[0] <= 0.0:
            out.append(f"{name} not positive definite")
            return
        if not strict and eigs[0] < -1e-10:
            out.append(f"{name} not positive semidefinite")
            return


def validate_spec(spec):
    """Every violated cost/weight/probability condition, as data (never raises)."""
    out = []
    _check_sym_psd(spec.Q0, (spec.n, spec.n), "Q0", out)
    _check_sym_psd(spec.Q, (spec.n, spec.n), "Q", out)
    _check_sym_psd(spec.G0, (spec.n, spec.n), "G0", out)
    _check_sym_psd(spec.G, (spec.n, spec.n), "G", out)
    _check_sym_psd(spec.R0, (spec.m, spec.m), "R0", out, strict=True)
    for k in range(spec.K):
        _check_sym_psd(spec.R[k], (spec.m, spec.m), f"R[{k}]", out, strict=True)
    if not 0.0 <= spec.rho0 <= 1.0:
        out.append("rho0 out of [0,1]")
    if not 0.0 <= spec.rho <= 1.0:
        out.append("rho out of [0,1]")
    if np.any(spec.pi <= 0.0):
        out.append("pi has a nonpositive entry")
    if abs(float(spec.pi.sum()) - 1.0) > 1e-12:
        out.append("pi does not sum to 1")
    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# population bookkeeping


@dataclass(frozen=True)
class PopulationAssignment:
    N: int
    theta: np.ndarray  # type label per agent, sorted by type
    counts: np.ndarray  # N_k
    pi_emp: np.ndarray  # empirical type fractions
    eps_n: float  # sup_k |pi_emp_k - pi_k|


def assign_population(spec, total):
    """Deterministic largest-remainder split of ``total`` agents over the K types.

    Ties in the fractional remainders go to the lower type index; every type
    keeps at least one agent (the deficit is taken from the largest class).
    """
    if total < spec.K:
        raise StructuralError("population smaller than type count")
    raw = total * spec.pi
    counts = np.floor(raw).astype(int)
    rem = raw - counts
    leftover = total - int(counts.sum())
    order = sorted(range(spec.K), key=lambda i: (-rem[i], i))
    for i in order[:leftover]:
        counts[i] += 1
    while np.any(counts == 0):
        empty = int(np.argmax(counts == 0))
        donor = int(np.argmax(counts))
        counts[donor] -= 1
        counts[empty] += 1
    theta = np.repeat(np.arange(spec.K), counts)
    pi_emp = counts / total
    return PopulationAssignment(
        N=total,
        theta=theta,
        counts=counts,
        pi_emp=pi_emp,
        eps_n=float(np.max(np.abs(pi_emp - spec.pi))),
    )


# ---------------------------------------------------------------------------
# stacked block system


@dataclass(frozen=True)
class StackedSystem:
    """Joint block form of the K+1 coupled forward-backward equations.

    Blocks follow the layout that reproduces the per-agent drifts elementwise
    (state equations stacked major-first).  ``norms`` carries the Frobenius
    norm of every block; for time-varying coefficients each block is assembled
    per step and the scalars below are uniform-in-time bounds.
    """

    n: int
    K: int
    pi_row: np.ndarray  # (0, pi_1, ..., pi_K)
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    R_inv: np.ndarray
    Q: np.ndarray
    G: np.ndarray
    H: np.ndarray
    F1_pi: np.ndarray
    F2_pi: np.ndarray
    Q_pi: np.ndarray
    G_pi: np.ndarray
    b_vec: np.ndarray
    sigma_blk: np.ndarray
    lam_star: float
    lam_star_f1: float
    norms: dict = field(repr=False)


def _blockdiag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r : r + m.shape[0], c : c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def _sym_top_eig(mat, label):
    try:
        eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed on {label}: {exc}") from exc
    return float(eigs[-1])


def _stacked_at(spec, j, steps):
    """All blocks for one time step (index into materialized coefficients)."""
    n, K = spec.n, spec.K
    g = lambda name: steps[name][j]
    a_blocks = [g("A0")] + [steps["A"][k][j] for k in range(K)]
    d_blocks = [g("D0")] + [steps["D"][k][j] for k in range(K)]
    r_blocks = [np.linalg.inv(g("R0"))] + [np.linalg.inv(steps["R"][k][j]) for k in range(K)]
    pi_row = np.concatenate([[0.0], spec.pi])
    kron = lambda mat: np.kron(pi_row[None, :], mat)

    q0, q = g("Q0"), g("Q")
    big_q = _blockdiag([q0] + [q] * K)
    big_g = _blockdiag([spec.G0] + [spec.G] * K)
    # first column carries the major's appearance in the minor source terms;
    # signed so that the stacked drift reproduces the per-agent equations
    for k in range(1, K + 1):
        big_q[k * n : (k + 1) * n, 0:n] = -(1.0 - spec.rho) * q
        big_g[k * n : (k + 1) * n, 0:n] = -(1.0 - spec.rho) * spec.G

    return {
        "A": _blockdiag(a_blocks),
        "B": _blockdiag([g("B0")] + [g("B")] * K),
        "C": _blockdiag([g("C0")] + [g("C")] * K),
        "D": _blockdiag(d_blocks),
        "R_inv": _blockdiag(r_blocks),
        "Q": big_q,
        "G": big_g,
        "H": np.vstack([np.zeros((n, n))] + [g("H")] * K),
        "F1_pi": np.vstack([kron(g("F0_1"))] + [kron(g("F1"))] * K),
        "F2_pi": np.vstack([kron(g("F0_2"))] + [kron(g("F2"))] * K),
        "Q_pi": np.vstack([spec.rho0 * kron(q0)] + [spec.rho * kron(q)] * K),
        "G_pi": np.vstack([spec.rho0 * kron(spec.G0)] + [spec.rho * kron(spec.G)] * K),
        "b_vec": np.concatenate([g("b0")] + [g("b")] * K),
        "sigma_blk": _blockdiag([g("sigma0").reshape(-1, 1)] + [g("sigma").reshape(-1, 1)] * K),
    }


_STACK_SOURCES = {
    "A0": (("n", "n"),), "B0": (("n", "m"),), "C0": (("n", "n"),), "D0": (("n", "m"),),
    "F0_1": (("n", "n"),), "F0_2": (("n", "n"),), "b0": (("n",),), "sigma0": (("n",),),
    "B": (("n", "m"),), "C": (("n", "n"),), "F1": (("n", "n"),), "F2": (("n", "n"),),
    "H": (("n", "n"),), "b": (("n",),), "sigma": (("n",),),
    "Q0": (("n", "n"),), "Q": (("n", "n"),), "R0": (("m", "m"),),
}


def build_stacked(spec):
    """Assemble the stacked blocks and the derived spectral/norm scalars."""
    n, m, K = spec.n, spec.m, spec.K
    dims = {"n": n, "m": m}
    steps = {}
    j_max = 1
    for name, (shape_spec,) in _STACK_SOURCES.items():
        base = tuple(dims[s] for s in shape_spec)
        arr = getattr(spec, name)
        if is_time_varying(arr, base):
            j_max = max(j_max, arr.shape[0])
    for name, (shape_spec,) in _STACK_SOURCES.items():
        base = tuple(dims[s] for s in shape_spec)
        steps[name] = coeff_steps(getattr(spec, name), base, j_max)
    steps["A"] = [coeff_steps(spec.A[k], (n, n), j_max) for k in range(K)]
    steps["D"] = [coeff_steps(spec.D[k], (n, m), j_max) for k in range(K)]
    steps["R"] = [coeff_steps(spec.R[k], (m, m), j_max) for k in range(K)]

    first = None
    lam_star = -np.inf
    lam_star_f1 = -np.inf
    norms = {}
    for j in range(j_max):
        blocks = _stacked_at(spec, j, steps)
        if first is None:
            first = blocks
        lam_star = max(lam_star, _sym_top_eig(blocks["A"], "stacked state matrix"))
        lam_star_f1 = max(lam_star_f1, _sym_top_eig(blocks["F1_pi"], "stacked mean-field gain"))
        for key, mat in blocks.items():
            norms[key] = max(norms.get(key, 0.0), float(np.linalg.norm(mat)))

    return StackedSystem(
        n=n,
        K=K,
        pi_row=np.concatenate([[0.0], spec.pi]),
        lam_star=lam_star,
        lam_star_f1=lam_star_f1,
        norms=norms,
        **first,
    )


@dataclass(frozen=True)
class H1Constants:
    """Lipschitz/monotonicity constants of the joint system, plus the sharpened
    mean-field constant ``k1_sharp`` (top eigenvalue instead of the norm)."""

    lam1: float
    lam2: float
    k0: float
    k1: float
    k2: float
    k3: float
    k4: float
    k5: float
    k6: float
    k7: float
    k8: float
    k9: float
    k10: float
    k11: float
    k12: float
    k1_sharp: float


def operator_constants(sys):
    """Constants read off the stacked blocks (Frobenius norms throughout)."""
    nm = {key: float(np.linalg.norm(mat)) for key, mat in {
        "A": sys.A, "B": sys.B, "C": sys.C, "D": sys.D, "R_inv": sys.R_inv,
        "Q": sys.Q, "G": sys.G, "H": sys.H, "F1_pi": sys.F1_pi,
        "F2_pi": sys.F2_pi, "Q_pi": sys.Q_pi, "G_pi": sys.G_pi,
    }.items()}
    # uniform-in-time systems carry tighter per-step norms; prefer those
    if sys.norms:
        nm.update({k: v for k, v in sys.norms.items() if k in nm})
    coupling = nm["R_inv"] * (nm["B"] + nm["D"])
    return H1Constants(
        lam1=sys.lam_star,
        lam2=sys.lam_star,
        k0=nm["A"],
        k1=nm["F1_pi"],
        k2=nm["B"] * coupling,
        k3=nm["B"] * coupling,
        k4=nm["Q"],
        k5=nm["Q_pi"],
        k6=nm["C"],
        k7=2.0 * (nm["C"] + nm["H"]),
        k8=2.0 * nm["F2_pi"],
        k9=nm["D"] * coupling,
        k10=nm["D"] * coupling,
        k11=np.sqrt(2.0) * nm["G"],
        k12=np.sqrt(2.0) * nm["G_pi"],
        k1_sharp=sys.lam_star_f1,
    )
