"""Brownian ensembles and the cross-sectional conditional-mean estimator.

One ensemble holds P independent common-noise paths; each common path carries
M minor particles per type.  Every increment stream is addressed by
``(master seed, role, p, k, i)`` through a Philox generator keyed by a seed
sequence with that spawn key, so regeneration is independent of generation
order and thread count.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, StructuralError

ROLE_COMMON = 0
ROLE_MINOR = 1
ROLE_AGENT = 2
ROLE_CANDIDATE = 3

DEFAULT_MEMORY_CAP = 4 * 1024**3


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with J steps; the last node is exactly T."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0 or self.steps < 1:
            raise StructuralError("need horizon > 0 and at least one step")

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def nodes(self):
        out = self.dt * np.arange(self.steps + 1)
        out[-1] = self.horizon
        return out


def stream(master_seed, role, *key):
    """Generator for one addressed stream; same address, same stream, always."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(role),) + tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoiseEnsemble:
    """Scalar Brownian increments for the common and per-particle noises.

    ``dw_common``: (P, J); ``dw_minor``: (P, K, M, J); all increments are
    Normal(0, dt) under the addressed streams.
    """

    grid: TimeGrid
    seed: int
    dw_common: np.ndarray
    dw_minor: np.ndarray
    derivation: dict = field(repr=False)

    @property
    def num_paths(self):
        return self.dw_common.shape[0]

    @property
    def num_types(self):
        return self.dw_minor.shape[1]

    @property
    def particles(self):
        return self.dw_minor.shape[2]


def sample_ensemble(grid, num_paths, particles, num_types, seed, memory_cap=DEFAULT_MEMORY_CAP):
    """Draw the full increment ensemble for the given grid.

    Raises :class:`CapacityError` before allocating anything if the estimate
    exceeds ``memory_cap`` bytes.
    """
    if num_paths < 1 or particles < 1 or num_types < 1:
        raise StructuralError("need at least one path, one particle, one type")
    j = grid.steps
    estimate = 8 * (num_paths * j + num_paths * num_types * particles * j)
    if estimate > memory_cap:
        raise CapacityError(
            f"ensemble would need ~{estimate / 1e9:.2f} GB, cap is {memory_cap / 1e9:.2f} GB"
        )
    sd = np.sqrt(grid.dt)
    dw_common = np.empty((num_paths, j))
    for p in range(num_paths):
        dw_common[p] = stream(seed, ROLE_COMMON, p).normal(0.0, sd, size=j)
    dw_minor = np.empty((num_paths, num_types, particles, j))
    for p in range(num_paths):
        for k in range(num_types):
            for i in range(particles):
                dw_minor[p, k, i] = stream(seed, ROLE_MINOR, p, k, i).normal(0.0, sd, size=j)
    derivation = {
        "scheme": "philox-seedsequence",
        "spawn_key": "(role, p[, k, i])",
        "roles": {"common": ROLE_COMMON, "minor": ROLE_MINOR},
    }
    return NoiseEnsemble(grid=grid, seed=int(seed), dw_common=dw_common, dw_minor=dw_minor, derivation=derivation)


def agent_increments(grid, seed, count, rep=0, offset=0, context=()):
    """Fresh per-agent increment block (count, J) addressed by (context, rep, agent)."""
    sd = np.sqrt(grid.dt)
    out = np.empty((count, grid.steps))
    for i in range(count):
        out[i] = stream(seed, ROLE_AGENT, *context, rep, offset + i).normal(0.0, sd, size=grid.steps)
    return out


def conditional_mean(values):
    """Arithmetic mean across the particles sharing one common path.

    ``values``: (M, n) or any array whose first axis is the particle axis.
    This is the estimator of the common-noise conditional expectation of a
    minor-agent quantity.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] == 0:
        raise StructuralError("conditional mean of an empty particle set")
    return values.mean(axis=0)


def phi_field(cond_means, pi):
    """Type-weighted aggregate of the per-type conditional means.

    ``cond_means``: (K, ...) stacked per-type means; returns sum_k pi_k * mean_k.
    """
    cond_means = np.asarray(cond_means, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if cond_means.shape[0] != pi.shape[0]:
        raise StructuralError("need one conditional mean per type")
    return np.tensordot(pi, cond_means, axes=(0, 0))
