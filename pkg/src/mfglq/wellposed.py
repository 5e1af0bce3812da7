"""Checkable well-posedness conditions for the consistency system.

Three layers, from cheapest to most informative:

* the terminal-weight smallness product (strictly below one),
* a sufficient horizon bound for the small-time contraction, with an
  explicitly reconstructed growth constant,
* the arbitrary-horizon certificate: a spectral inequality on the stacked
  blocks plus a grid search over the free parameters of the weighted-norm
  contraction factor; the factor strictly below one certifies the fixed
  point for every horizon.

All inequalities are strict and evaluated with zero tolerance.
"""

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError
from .model import build_stacked, coeff_norm, operator_constants

__all__ = [
    "A4Report",
    "SpectralCheck",
    "GlobalCertificate",
    "check_A4",
    "check_global",
    "local_horizon_bound",
    "empirical_contraction",
]


@dataclass(frozen=True)
class A4Report:
    """Terminal-weight smallness: m0 * dmax^2 < 1 strictly."""

    m0: float
    dmax: float
    product: float
    passed: bool


def check_A4(spec):
    g0 = float(np.linalg.norm(spec.G0))
    g = float(np.linalg.norm(spec.G))
    m0 = max(
        g0**2 * (1.0 + spec.rho0**2),
        g**2 * (1.0 + spec.rho**2 + (1.0 - spec.rho) ** 2),
    )
    dmax = coeff_norm(spec.D0, (spec.n, spec.m))
    for k in range(spec.K):
        dmax = max(dmax, coeff_norm(spec.D[k], (spec.n, spec.m)))
    product = m0 * dmax**2
    return A4Report(m0=m0, dmax=dmax, product=product, passed=bool(product < 1.0))


@dataclass(frozen=True)
class SpectralCheck:
    """The two arbitrary-horizon spectral inequalities on the stacked system.

    ``norm_variant`` uses the Frobenius norm of the mean-field gain block;
    ``eigen_variant`` sharpens it to the top eigenvalue of its symmetric part.
    """

    lhs: float
    rhs_norm: float
    rhs_eigen: float
    norm_variant: bool
    eigen_variant: bool


@dataclass(frozen=True)
class GlobalCertificate:
    """Weighted-norm contraction factor at the best grid point.

    ``rho_cert`` below one (with the positivity side conditions) certifies a
    unique solution for every horizon.
    """

    passed: bool
    rho_cert: float
    lam: float
    K1: float
    K2: float
    K3: float
    K4: float
    lam_bar_1: float
    lam_bar_2: float
    variant: str
    feasible_points: int

    def as_dict(self):
        return {
            "passed": self.passed,
            "rho_cert": self.rho_cert,
            "lam": self.lam,
            "K1": self.K1, "K2": self.K2, "K3": self.K3, "K4": self.K4,
            "lam_bar_1": self.lam_bar_1,
            "lam_bar_2": self.lam_bar_2,
            "variant": self.variant,
            "feasible_points": self.feasible_points,
        }


_LAM_GRID = np.arange(-50.0, 50.0 + 0.25, 0.5)
_K_GRID = np.logspace(-3.0, 3.0, 24)


def _certificate_search(consts, k1_eff, variant):
    """Minimize the contraction factor over (lam, K1..K4) on the fixed grid.

    Deterministic reduction: the winner is the lexicographic minimum of
    (factor, flat grid index).
    """
    k = consts
    best = None
    feasible = 0
    kk1 = _K_GRID[:, None, None, None]
    kk2 = _K_GRID[None, :, None, None]
    kk3 = _K_GRID[None, None, :, None]
    kk4 = _K_GRID[None, None, None, :]
    third = np.maximum(k.k2 * kk1 + k.k9**2, k.k3 * kk2 + k.k10**2)
    one_minus = 1.0 - k.k6 * kk4
    for lam in _LAM_GRID:
        lam_bar_1 = lam - 2.0 * k.lam1 - k.k2 / kk1 - k.k3 / kk2 - 2.0 * k1_eff - k.k7**2 - k.k8**2
        lam_bar_2 = -lam - 2.0 * k.lam2 - (k.k4 + k.k5) / kk3 - k.k6 / kk4
        ok = (lam_bar_1 > 0.0) & (lam_bar_2 > 0.0) & (one_minus > 0.0)
        if not np.any(ok):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = (
                (1.0 / lam_bar_2 + 1.0 / one_minus)
                * (k.k11**2 + k.k12**2 + (k.k4 + k.k5) * kk3 / lam_bar_1)
                * third
            )
        rho = np.where(ok, rho, np.inf)
        feasible += int(np.sum(ok))
        shape = rho.shape
        idx = np.unravel_index(np.argmin(rho), shape)
        val = float(rho[idx])
        if best is None or val < best[0]:
            best = (
                val, float(lam),
                float(_K_GRID[idx[0]]), float(_K_GRID[idx[1]]),
                float(_K_GRID[idx[2]]), float(_K_GRID[idx[3]]),
                float(np.broadcast_to(lam_bar_1, shape)[idx]),
                float(np.broadcast_to(lam_bar_2, shape)[idx]),
            )
    if best is None:
        return GlobalCertificate(
            passed=False, rho_cert=float("inf"), lam=float("nan"),
            K1=float("nan"), K2=float("nan"), K3=float("nan"), K4=float("nan"),
            lam_bar_1=float("nan"), lam_bar_2=float("nan"),
            variant=variant, feasible_points=0,
        )
    val, lam, k1g, k2g, k3g, k4g, lb1, lb2 = best
    return GlobalCertificate(
        passed=bool(val < 1.0), rho_cert=val, lam=lam,
        K1=k1g, K2=k2g, K3=k3g, K4=k4g,
        lam_bar_1=lb1, lam_bar_2=lb2,
        variant=variant, feasible_points=feasible,
    )


def check_global(sys):
    """Spectral inequalities plus the best contraction certificate.

    Both the norm and sharpened-eigenvalue variants of the certificate grid
    are searched; the returned certificate is the better of the two.
    """
    consts = operator_constants(sys)
    lhs = 4.0 * sys.lam_star
    rhs_norm = -2.0 * consts.k1 - consts.k6**2 - consts.k7**2 - consts.k8**2
    rhs_eigen = -2.0 * consts.k1_sharp - consts.k6**2 - consts.k7**2 - consts.k8**2
    spectral = SpectralCheck(
        lhs=lhs,
        rhs_norm=rhs_norm,
        rhs_eigen=rhs_eigen,
        norm_variant=bool(lhs < rhs_norm),
        eigen_variant=bool(lhs < rhs_eigen),
    )
    cert_norm = _certificate_search(consts, consts.k1, "norm")
    cert_eigen = _certificate_search(consts, consts.k1_sharp, "sharpened-eigenvalue")
    cert = cert_eigen if cert_eigen.rho_cert <= cert_norm.rho_cert else cert_norm
    return spectral, cert


# ---------------------------------------------------------------------------
# small-horizon sufficient bound


def _growth_constant(spec, eps):
    """Explicit uniform growth constant of the mean-square estimates.

    Collects the Young-inequality constants of the forward and backward
    stability sweeps: state feedback through the dynamics, mean-field
    reinjection, diffusion amplification, and the cost-gradient source terms,
    each paired with a 1/eps penalty where a product was split.  Conservative
    by construction; any upper bound on the true growth rate is admissible
    and only shrinks the certified horizon.
    """
    n, m = spec.n, spec.m
    a_bar = coeff_norm(spec.A0, (n, n))
    b_bar = coeff_norm(spec.B0, (n, m))
    c_bar = coeff_norm(spec.C0, (n, n))
    f1_bar = max(coeff_norm(spec.F0_1, (n, n)), coeff_norm(spec.F1, (n, n)))
    f2_bar = max(coeff_norm(spec.F0_2, (n, n)), coeff_norm(spec.F2, (n, n)))
    q_bar = max(coeff_norm(spec.Q0, (n, n)), coeff_norm(spec.Q, (n, n)))
    h_bar = coeff_norm(spec.H, (n, n))
    lip = 0.0
    for k in range(spec.K):
        a_bar = max(a_bar, coeff_norm(spec.A[k], (n, n)))
        b_bar = max(b_bar, coeff_norm(spec.B, (n, m)))
        c_bar = max(c_bar, coeff_norm(spec.C, (n, n)))
        met = spec.metric_of(k)
        lip = max(
            lip,
            np.sqrt(met.cond) * float(np.linalg.norm(met.inv))
            * max(coeff_norm(spec.B, (n, m)), coeff_norm(spec.D[k], (n, m))),
        )
    met0 = spec.metric0()
    lip = max(
        lip,
        np.sqrt(met0.cond) * float(np.linalg.norm(met0.inv))
        * max(b_bar, coeff_norm(spec.D0, (n, m))),
    )
    kk = spec.K
    return (
        2.0 * a_bar
        + (2.0 * b_bar**2 * max(lip, 1.0) ** 2) / eps
        + (kk + 1.0) * f1_bar
        + 3.0 * (1.0 + 1.0 / eps) * (c_bar**2 + (kk + 1.0) * f2_bar**2 + h_bar**2)
        + (kk + 2.0) * q_bar
        + c_bar**2 / eps
        + 1.0
    )


def local_horizon_bound(spec, eps):
    """Largest horizon from a decreasing dyadic sweep certifying contraction.

    Requires the smallness product to leave room for the chosen eps:
    m0 * (dmax^2 + eps) + eps must be below one.
    """
    report = check_A4(spec)
    if not report.passed:
        raise StructuralError("terminal-weight smallness fails; no horizon bound exists")
    m0, dsq = report.m0, report.dmax**2
    if m0 * (dsq + eps) + eps >= 1.0:
        raise StructuralError("eps too large for the smallness margin")
    growth = _growth_constant(spec, eps)
    horizon = 1.0
    for _ in range(80):
        amp = np.exp(growth * horizon)
        factor = amp * (horizon + 1.0) * (m0 * amp * (dsq + eps) + eps + horizon * amp * (dsq + eps))
        if factor < 1.0:
            return horizon
        horizon /= 2.0
    raise StructuralError("no horizon in the sweep satisfies the contraction factor")


def empirical_contraction(spec, ensemble, tol=1e-9, max_iter=40):
    """Observed one-sweep contraction ratios of the solver on this ensemble."""
    from .solver import picard_solve

    _, report = picard_solve(spec, ensemble, tol=tol, max_iter=max_iter)
    return report.ratios, report
