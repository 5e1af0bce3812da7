"""Configuration files: one TOML document describing a game and its runs.

Sections: ``[model]`` carries dimensions, coefficients (nested arrays; a
leading extra axis makes a coefficient piecewise-constant per grid step),
costs, and the type weights; ``[constraints]`` declares the control sets by
variant name; ``[solver]`` the grid and ensemble sizes; ``[study]`` optional
experiment defaults.
"""

import hashlib
from dataclasses import dataclass

import tomli

from .convex import Box, FullSpace, HalfspaceCone, LinearSubspace, NonnegativeOrthant
from .errors import ConfigError, MfglqError
from .model import ModelSpec

_MODEL_FIELDS = [
    "n", "m", "K", "T", "pi", "x0_init", "x_init", "rho0", "rho",
    "A0", "B0", "C0", "D0", "F0_1", "F0_2", "b0", "sigma0",
    "A", "D", "R", "B", "C", "F1", "F2", "H", "b", "sigma",
    "Q0", "R0", "G0", "Q", "G",
]

_VARIANTS = {
    "full_space": lambda m, p: FullSpace(m),
    "nonnegative_orthant": lambda m, p: NonnegativeOrthant(m),
    "box": lambda m, p: Box(p["lower"], p["upper"]),
    "linear_subspace": lambda m, p: LinearSubspace(p["mat"]),
    "halfspace_cone": lambda m, p: HalfspaceCone(p["mat"]),
}


@dataclass(frozen=True)
class SolverParams:
    steps: int = 100
    paths: int = 32
    particles: int = 256
    seed: int = 0
    tol: float = 1e-7
    max_iter: int = 60

    def replaced(self, **kw):
        data = self.__dict__ | {k: v for k, v in kw.items() if v is not None}
        return SolverParams(**data)


@dataclass(frozen=True)
class StudyParams:
    kind: str = "state-gap"
    ns: tuple = (8, 16, 32, 64)
    replications: int = 32
    agent: int = 0

    def replaced(self, **kw):
        data = dict(
            kind=self.kind, ns=self.ns, replications=self.replications, agent=self.agent
        )
        data.update({k: v for k, v in kw.items() if v is not None})
        data["ns"] = tuple(int(x) for x in data["ns"])
        return StudyParams(**data)


@dataclass(frozen=True)
class Config:
    spec: ModelSpec
    solver: SolverParams
    study: StudyParams
    sha: str
    path: str


def _constraint(entry, m, label):
    if not isinstance(entry, dict) or "variant" not in entry:
        raise ConfigError(f"{label}: expected a table with a 'variant' key")
    name = entry["variant"]
    if name not in _VARIANTS:
        raise ConfigError(f"{label}: unknown variant '{name}' (choose from {sorted(_VARIANTS)})")
    try:
        return _VARIANTS[name](m, entry)
    except KeyError as exc:
        raise ConfigError(f"{label}: variant '{name}' is missing parameter {exc}") from exc
    except MfglqError as exc:
        raise ConfigError(f"{label}: {exc}") from exc


def load_config(path):
    try:
        with open(path, "rb") as handle:
            raw_bytes = handle.read()
        doc = tomli.loads(raw_bytes.decode("utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc

    model = doc.get("model")
    if model is None:
        raise ConfigError("missing [model] section")
    missing = [f for f in _MODEL_FIELDS if f not in model]
    if missing:
        raise ConfigError(f"[model] is missing fields: {', '.join(missing)}")
    extra = set(model) - set(_MODEL_FIELDS)
    if extra:
        raise ConfigError(f"[model] has unknown fields: {', '.join(sorted(extra))}")

    cons = doc.get("constraints", {})
    m = int(model["m"])
    k = int(model["K"])
    gamma0 = _constraint(cons.get("gamma0", {"variant": "full_space"}), m, "constraints.gamma0")
    gamma_list = cons.get("gamma", [{"variant": "full_space"}] * k)
    if len(gamma_list) != k:
        raise ConfigError(f"constraints.gamma must list {k} sets, got {len(gamma_list)}")
    gamma = tuple(
        _constraint(entry, m, f"constraints.gamma[{i}]") for i, entry in enumerate(gamma_list)
    )

    try:
        spec = ModelSpec(gamma0=gamma0, gamma=gamma, **{f: model[f] for f in _MODEL_FIELDS})
    except MfglqError as exc:
        raise ConfigError(f"[model]: {exc}") from exc

    sol = doc.get("solver", {})
    solver = SolverParams(
        steps=int(sol.get("J", 100)),
        paths=int(sol.get("P", 32)),
        particles=int(sol.get("M", 256)),
        seed=int(sol.get("seed", 0)),
        tol=float(sol.get("tol", 1e-7)),
        max_iter=int(sol.get("max_iter", 60)),
    )
    st = doc.get("study", {})
    study = StudyParams(
        kind=str(st.get("kind", "state-gap")),
        ns=tuple(int(x) for x in st.get("Ns", (8, 16, 32, 64))),
        replications=int(st.get("replications", 32)),
        agent=int(st.get("agent", 0)),
    )
    return Config(
        spec=spec,
        solver=solver,
        study=study,
        sha=hashlib.sha256(raw_bytes).hexdigest(),
        path=str(path),
    )
