import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from mfglq.convex import FullSpace
from mfglq.model import ModelSpec


def scalar_spec(K=1, pi=None, **overrides):
    """Scalar (n = m = 1) spec with quiet defaults; keyword fields override.

    2-d values for the per-type fields A, D, R are broadcast to all K types.
    """
    if pi is None:
        pi = [1.0 / K] * K
    fields = dict(
        n=1, m=1, K=K, T=1.0,
        A0=[[-1.0]], B0=[[1.0]], C0=[[0.0]], D0=[[0.0]],
        F0_1=[[0.0]], F0_2=[[0.0]], b0=[0.0], sigma0=[0.0],
        A=[[[-1.0]]] * K, D=[[[0.0]]] * K, R=[[[1.0]]] * K,
        B=[[1.0]], C=[[0.0]], F1=[[0.0]], F2=[[0.0]], H=[[0.0]],
        b=[0.0], sigma=[0.0],
        Q0=[[1.0]], R0=[[1.0]], G0=[[1.0]], rho0=0.5,
        Q=[[1.0]], G=[[1.0]], rho=0.5,
        gamma0=FullSpace(1), gamma=tuple(FullSpace(1) for _ in range(K)),
        pi=pi, x0_init=[1.0], x_init=[1.0],
    )
    for key, val in overrides.items():
        if key in {"A", "D", "R"} and np.ndim(val) == 2:
            val = [val] * K
        fields[key] = val
    return ModelSpec(**fields)


def coupled_benchmark(K=2, T=1.0, gamma0=None, gamma=None, sigma_scale=1.0):
    """Scalar coupled benchmark passing the terminal-weight smallness check.

    Moderate mean-field feedback through the state average, common-noise
    exposure of the minors through the major state, and nonzero control
    weights in both diffusions.
    """
    if gamma0 is None:
        gamma0 = FullSpace(1)
    if gamma is None:
        gamma = tuple(FullSpace(1) for _ in range(K))
    a_minor = [[[-1.0 - 0.2 * k]] for k in range(K)]
    return scalar_spec(
        K=K, pi=[1.0 / K] * K, T=T,
        A0=[[-0.8]], B0=[[1.0]], C0=[[0.2]], D0=[[0.2]],
        F0_1=[[0.4]], F0_2=[[0.2]], b0=[0.0], sigma0=[0.4 * sigma_scale],
        A=a_minor, D=[[[0.2]]] * K, R=[[[1.0]]] * K,
        B=[[1.0]], C=[[0.2]], F1=[[0.4]], F2=[[0.2]], H=[[0.3]],
        b=[0.0], sigma=[0.4 * sigma_scale],
        Q0=[[1.0]], G0=[[0.5]], rho0=0.5,
        Q=[[1.0]], G=[[0.5]], rho=0.5,
        gamma0=gamma0, gamma=gamma,
        x0_init=[1.0], x_init=[0.5],
    )
