"""Problem-instance data model and scenario file I/O.

Indices are zero-based throughout the package: regions ``0..R-1``,
environment states ``0..|E|-1`` and observations ``0..|O|-1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PARTITION = "partition"
FREE_SPACE = "free-space-disjunction"
COVERAGE_MODES = (PARTITION, FREE_SPACE)

MEMBERSHIP_TOL = 1e-9
STRICT_MARGIN = 1e-6
PSD_FLOOR = -1e-10
ROW_SUM_TOL = 1e-12


class ScenarioError(ValueError):
    """Base class for scenario problems."""


class ScenarioParseError(ScenarioError):
    """The scenario file is not valid JSON or misses required fields."""


class ScenarioValidationError(ScenarioError):
    """A scenario parsed but violates a model invariant."""


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != ndim:
        raise ScenarioValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioValidationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        B = _frozen(self.B, 2, "B")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        n = A.shape[0]
        if n < 1 or A.shape != (n, n):
            raise ScenarioValidationError(f"A must be square with n >= 1, got {A.shape}")
        if B.shape[0] != n or B.shape[1] < 1:
            raise ScenarioValidationError(f"B must be {n}x d with d >= 1, got {B.shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class Polytope:
    """The set ``{y : H y <= h}``.

    Rows flagged in ``strict`` are read as ``H_j y < h_j``. Membership tests
    exclude the boundary of those rows, and :meth:`tightened` shifts them
    inward by a small margin so a convex solver can respect them.
    """

    H: np.ndarray
    h: np.ndarray
    name: Optional[str] = None
    strict: Optional[np.ndarray] = None

    def __post_init__(self):
        H = _frozen(self.H, 2, "H")
        h = _frozen(self.h, 1, "h")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)
        if H.shape[0] != h.shape[0]:
            raise ScenarioValidationError(
                f"polytope has {H.shape[0]} rows in H but {h.shape[0]} entries in h")
        strict = np.zeros(h.shape[0], dtype=bool) if self.strict is None \
            else np.array(self.strict, dtype=bool).reshape(-1)
        if strict.shape != h.shape:
            raise ScenarioValidationError(
                f"polytope strict mask has {strict.size} entries for {h.size} rows")
        strict.setflags(write=False)
        object.__setattr__(self, "strict", strict)
        if H.shape[0] and np.any(np.all(H == 0.0, axis=1)):
            raise ScenarioValidationError("polytope has an all-zero row in H")

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def violation(self, y) -> float:
        """Largest violation of the tightened constraints; <= 0 means inside."""
        if self.H.shape[0] == 0:
            return -math.inf
        return float(np.max(self.H @ np.asarray(y, dtype=float) - self.tightened()))

    def contains(self, y, tol: float = MEMBERSHIP_TOL) -> bool:
        if self.H.shape[0] == 0:
            return True
        slack = self.H @ np.asarray(y, dtype=float) - self.h
        return bool(np.all(np.where(self.strict, slack < -tol, slack <= tol)))

    def tightened(self, margin: float = STRICT_MARGIN) -> np.ndarray:
        """Right-hand side with strict rows pulled in by ``margin``."""
        return self.h - margin * self.strict


@dataclass(frozen=True)
class RegionPartition:
    regions: tuple
    coverage_mode: str = PARTITION

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if len(self.regions) < 1:
            raise ScenarioValidationError("at least one region is required")
        if self.coverage_mode not in COVERAGE_MODES:
            raise ScenarioValidationError(
                f"coverage_mode must be one of {COVERAGE_MODES}, got {self.coverage_mode!r}")

    def __len__(self):
        return len(self.regions)

    @property
    def R(self) -> int:
        return len(self.regions)


def region_of_state(partition: RegionPartition, x) -> Optional[int]:
    """Lowest index of a region containing ``x`` (boundary tolerance 1e-9), else None."""
    x = np.asarray(x, dtype=float)
    for i, reg in enumerate(partition.regions):
        if reg.contains(x, MEMBERSHIP_TOL):
            return i
    return None


@dataclass(frozen=True)
class ObservationModel:
    """Piecewise observation tables; ``tables[i][e, o] = P(o | e, x in region i)``."""

    tables: np.ndarray

    def __post_init__(self):
        T = _frozen(self.tables, 3, "observation tables")
        object.__setattr__(self, "tables", T)
        if T.shape[0] < 1 or T.shape[1] < 1 or T.shape[2] < 1:
            raise ScenarioValidationError(f"observation tables have empty shape {T.shape}")
        if np.any(T <= 0.0) or np.any(T >= 1.0):
            raise ScenarioValidationError(
                "observation probabilities must lie strictly inside (0, 1)")
        sums = T.sum(axis=2)
        if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            raise ScenarioValidationError("each observation table row must sum to 1")

    @property
    def num_regions(self) -> int:
        return self.tables.shape[0]

    @property
    def num_env_states(self) -> int:
        return self.tables.shape[1]

    @property
    def num_observations(self) -> int:
        return self.tables.shape[2]

    def is_constant(self) -> bool:
        return bool(np.all(self.tables == self.tables[0]))


@dataclass(frozen=True)
class TransitionModel:
    """Column-stochastic environment transition matrix (constant in x)."""

    omega: np.ndarray
    static: bool = False

    def __post_init__(self):
        W = _frozen(self.omega, 2, "omega")
        object.__setattr__(self, "omega", W)
        k = W.shape[0]
        if W.shape != (k, k) or k < 1:
            raise ScenarioValidationError(f"omega must be square, got {W.shape}")
        if np.any(W < 0.0) or np.any(W > 1.0):
            raise ScenarioValidationError("omega entries must lie in [0, 1]")
        if np.max(np.abs(W.sum(axis=0) - 1.0)) > ROW_SUM_TOL:
            raise ScenarioValidationError("omega columns must sum to 1")
        if self.static and not np.array_equal(W, np.eye(k)):
            raise ScenarioValidationError("a static transition model must be the identity")

    @classmethod
    def identity(cls, num_env_states: int) -> "TransitionModel":
        return cls(np.eye(num_env_states), static=True)

    @property
    def is_static(self) -> bool:
        return self.static or bool(np.array_equal(self.omega, np.eye(self.omega.shape[0])))


def _check_psd(M: np.ndarray, name: str):
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12):
        raise ScenarioValidationError(f"{name} must be symmetric")
    if M.size and np.min(np.linalg.eigvalsh(M)) < PSD_FLOOR:
        raise ScenarioValidationError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class CostSpec:
    Q: np.ndarray
    R: np.ndarray
    QN: np.ndarray
    x_goals: np.ndarray  # |E| x n
    u_goals: np.ndarray  # |E| x d

    def __post_init__(self):
        for name in ("Q", "R", "QN", "x_goals", "u_goals"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2, name))
        _check_psd(self.Q, "Q")
        _check_psd(self.R, "R")
        _check_psd(self.QN, "QN")
        if self.x_goals.shape[0] != self.u_goals.shape[0]:
            raise ScenarioValidationError("one state goal and one input goal per environment state")

    def stage(self, x, u, e: int) -> float:
        dx = np.asarray(x) - self.x_goals[e]
        du = np.asarray(u) - self.u_goals[e]
        return float(dx @ self.Q @ dx + du @ self.R @ du)

    def terminal(self, x, e: int) -> float:
        dx = np.asarray(x) - self.x_goals[e]
        return float(dx @ self.QN @ dx)


@dataclass(frozen=True)
class HorizonSpec:
    N: int
    Nb: int

    def __post_init__(self):
        if int(self.N) != self.N or int(self.Nb) != self.Nb:
            raise ScenarioValidationError("N and Nb must be integers")
        if self.N < 1 or self.Nb < 1:
            raise ScenarioValidationError("N and Nb must be >= 1")
        if self.N % self.Nb != 0:
            raise ScenarioValidationError(f"Nb={self.Nb} must divide N={self.N}")

    @property
    def P(self) -> int:
        return self.N // self.Nb


@dataclass(frozen=True)
class ScenarioSpec:
    system: LinearSystem
    input_set: Polytope
    state_set: Polytope
    partition: RegionPartition
    obs: ObservationModel
    trans: TransitionModel
    cost: CostSpec
    horizon: HorizonSpec
    x0: np.ndarray
    b0: np.ndarray
    obstacles: tuple = field(default=())
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "x0", _frozen(self.x0, 1, "x0"))
        object.__setattr__(self, "b0", _frozen(self.b0, 1, "b0"))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        self._validate()

    def _validate(self):
        n, d = self.system.n, self.system.d
        E = self.obs.num_env_states
        if self.state_set.dim != n and self.state_set.H.shape[0]:
            raise ScenarioValidationError(f"state_set has dimension {self.state_set.dim}, expected {n}")
        if self.input_set.dim != d and self.input_set.H.shape[0]:
            raise ScenarioValidationError(f"input_set has dimension {self.input_set.dim}, expected {d}")
        for i, reg in enumerate(self.partition.regions):
            if reg.dim != n:
                raise ScenarioValidationError(f"region {i} has dimension {reg.dim}, expected {n}")
        for i, obst in enumerate(self.obstacles):
            if obst.dim != n:
                raise ScenarioValidationError(f"obstacle {i} has dimension {obst.dim}, expected {n}")
        if self.obs.num_regions != self.partition.R:
            raise ScenarioValidationError(
                f"{self.obs.num_regions} observation tables for {self.partition.R} regions")
        if self.trans.omega.shape[0] != E:
            raise ScenarioValidationError("transition matrix size does not match |E|")
        c = self.cost
        if c.Q.shape != (n, n) or c.QN.shape != (n, n) or c.R.shape != (d, d):
            raise ScenarioValidationError("cost matrix dimensions do not match the system")
        if c.x_goals.shape != (E, n) or c.u_goals.shape != (E, d):
            raise ScenarioValidationError("need one goal pair (xg, ug) per environment state")
        if self.x0.shape != (n,):
            raise ScenarioValidationError(f"x0 must have length {n}")
        if self.b0.shape != (E,):
            raise ScenarioValidationError(f"b0 must have length {E}")
        if np.any(self.b0 <= 0.0):
            raise ScenarioValidationError("b0 not strictly positive")
        if abs(self.b0.sum() - 1.0) > 1e-10:
            raise ScenarioValidationError("b0 must sum to 1")
        if not self.state_set.contains(self.x0):
            raise ScenarioValidationError("x0 violates the state constraints")
        if self.partition.coverage_mode == FREE_SPACE and region_of_state(self.partition, self.x0) is None:
            raise ScenarioValidationError("x0 is not inside any free-space region")

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def d(self) -> int:
        return self.system.d

    @property
    def num_env_states(self) -> int:
        return self.obs.num_env_states

    @property
    def num_observations(self) -> int:
        return self.obs.num_observations

    @property
    def R(self) -> int:
        return self.partition.R

    def replace(self, **changes) -> "ScenarioSpec":
        """Copy with some members swapped; the result is re-validated."""
        import dataclasses
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# partition sanity checks

def state_set_box(spec: ScenarioSpec, free_extent: float = 50.0) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounding box of the state set; unbounded axes get +-free_extent."""
    from scipy.optimize import linprog

    n = spec.n
    lo = np.full(n, -free_extent)
    hi = np.full(n, free_extent)
    H, h = spec.state_set.H, spec.state_set.h
    if H.shape[0] == 0:
        return lo, hi
    bounds = [(None, None)] * n
    for i in range(n):
        c = np.zeros(n)
        c[i] = 1.0
        for sign, out in ((1.0, lo), (-1.0, hi)):
            res = linprog(sign * c, A_ub=H, b_ub=h, bounds=bounds, method="highs")
            if res.status == 0:
                out[i] = res.x[i]
    return lo, hi


def check_partition(spec: ScenarioSpec, num_samples: int = 2000, seed: int = 0) -> np.ndarray:
    """Sample the state set and count strict-interior region memberships.

    Raises ScenarioValidationError when two regions overlap in their interiors
    (partition mode) or a sampled feasible state lies in no region. Returns the
    number of regions containing each accepted sample (with boundary tolerance).
    """
    rng = np.random.default_rng(seed)
    lo, hi = state_set_box(spec)
    pts = rng.uniform(lo, hi, size=(num_samples, spec.n))
    if spec.state_set.H.shape[0]:
        inside = np.all(pts @ spec.state_set.H.T <= spec.state_set.h + MEMBERSHIP_TOL, axis=1)
        pts = pts[inside]
    strict = np.zeros(len(pts), dtype=int)
    loose = np.zeros(len(pts), dtype=int)
    for reg in spec.partition.regions:
        slack = pts @ reg.H.T - reg.h
        strict += np.all(slack < -MEMBERSHIP_TOL, axis=1)
        loose += np.all(slack <= MEMBERSHIP_TOL, axis=1)
    if spec.partition.coverage_mode == PARTITION:
        if np.any(strict > 1):
            raise ScenarioValidationError("partition regions overlap")
        if np.any(loose == 0):
            raise ScenarioValidationError("partition regions do not cover the state set")
    return loose


# ---------------------------------------------------------------------------
# JSON schema

def _get(d: dict, key: str, where: str = "scenario"):
    if not isinstance(d, dict) or key not in d:
        raise ScenarioParseError(f"missing field {where}.{key}")
    return d[key]


def _polytope(d: dict, where: str) -> Polytope:
    return Polytope(_as_matrix(_get(d, "H", where)), _get(d, "h", where), name=d.get("name"),
                    strict=d.get("strict"))


def _as_matrix(rows):
    # an empty constraint list becomes a 0 x 0 matrix; callers size-check it
    return rows if rows else np.zeros((0, 0))


def scenario_from_dict(data: dict, name: str = "") -> ScenarioSpec:
    """Build and validate a ScenarioSpec from the documented JSON structure."""
    if not isinstance(data, dict):
        raise ScenarioParseError("scenario document must be a JSON object")
    try:
        sysd = _get(data, "system")
        system = LinearSystem(_get(sysd, "A", "system"), _get(sysd, "B", "system"))
        n, d = system.n, system.d
        state_set = _polytope(_get(data, "state_set"), "state_set")
        input_set = _polytope(_get(data, "input_set"), "input_set")
        if state_set.H.shape == (0, 0):
            state_set = Polytope(np.zeros((0, n)), np.zeros(0))
        if input_set.H.shape == (0, 0):
            input_set = Polytope(np.zeros((0, d)), np.zeros(0))
        regions = [_polytope(r, f"regions[{i}]") for i, r in enumerate(_get(data, "regions"))]
        partition = RegionPartition(regions, data.get("coverage_mode", PARTITION))
        obsd = _get(data, "observation")
        tables = np.array(_get(obsd, "tables", "observation"), dtype=float)
        num_obs = int(_get(obsd, "num_obs", "observation"))
        if tables.ndim != 3 or tables.shape[2] != num_obs:
            raise ScenarioValidationError(
                f"observation tables must have shape R x |E| x {num_obs}, got {tables.shape}")
        obs = ObservationModel(tables)
        E = obs.num_env_states
        transd = _get(data, "transition")
        if transd == "static" or (isinstance(transd, dict) and transd.get("static") is True):
            trans = TransitionModel.identity(E)
        else:
            trans = TransitionModel(_get(transd, "omega", "transition"))
        costd = _get(data, "cost")
        goals = _get(costd, "goals", "cost")
        if not isinstance(goals, list) or not goals:
            raise ScenarioParseError("cost.goals must be a non-empty list")
        xg = [g["xg"] if isinstance(g, dict) and "xg" in g else None for g in goals]
        if any(v is None for v in xg):
            raise ScenarioParseError("every goal needs an xg field")
        ug = [g.get("ug", [0.0] * d) for g in goals]
        cost = CostSpec(_get(costd, "Q", "cost"), _get(costd, "R", "cost"),
                        _get(costd, "QN", "cost"), xg, ug)
        hd = _get(data, "horizon")
        horizon = HorizonSpec(_get(hd, "N", "horizon"), _get(hd, "Nb", "horizon"))
        obstacles = [_polytope(o, f"obstacles[{i}]") for i, o in enumerate(data.get("obstacles", []))]
        return ScenarioSpec(system, input_set, state_set, partition, obs, trans, cost, horizon,
                            _get(data, "x0"), _get(data, "b0"), obstacles=obstacles,
                            name=name or data.get("name", ""))
    except (TypeError, KeyError) as exc:
        raise ScenarioParseError(f"malformed scenario: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioParseError(f"malformed scenario: {exc}") from exc


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    spec = scenario_from_dict(data, name=path.stem)
    check_partition(spec)
    return spec


def _poly_dict(p: Polytope) -> dict:
    out = {"H": p.H.tolist(), "h": p.h.tolist()}
    if p.name is not None:
        out["name"] = p.name
    if p.strict.any():
        out["strict"] = p.strict.tolist()
    return out


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    trans = "static" if spec.trans.static else {"omega": spec.trans.omega.tolist()}
    out = {
        "name": spec.name,
        "system": {"A": spec.system.A.tolist(), "B": spec.system.B.tolist()},
        "state_set": _poly_dict(spec.state_set),
        "input_set": _poly_dict(spec.input_set),
        "regions": [_poly_dict(r) for r in spec.partition.regions],
        "coverage_mode": spec.partition.coverage_mode,
        "observation": {"num_obs": spec.num_observations, "tables": spec.obs.tables.tolist()},
        "transition": trans,
        "cost": {
            "Q": spec.cost.Q.tolist(), "R": spec.cost.R.tolist(), "QN": spec.cost.QN.tolist(),
            "goals": [{"xg": xg.tolist(), "ug": ug.tolist()}
                      for xg, ug in zip(spec.cost.x_goals, spec.cost.u_goals)],
        },
        "horizon": {"N": spec.horizon.N, "Nb": spec.horizon.Nb},
        "x0": spec.x0.tolist(),
        "b0": spec.b0.tolist(),
    }
    if spec.obstacles:
        out["obstacles"] = [_poly_dict(o) for o in spec.obstacles]
    return out


def save_scenario(spec: ScenarioSpec, path) -> None:
    from .jsonio import dumps
    Path(path).write_text(dumps(scenario_to_dict(spec), indent=1) + "\n")


# ---------------------------------------------------------------------------
# overrides used by the CLI and tests

def symmetric_table(num_env: int, accuracy: float) -> np.ndarray:
    """|E| x |E| table observing the true state with probability ``accuracy``."""
    off = (1.0 - accuracy) / (num_env - 1)
    T = np.full((num_env, num_env), off)
    np.fill_diagonal(T, accuracy)
    # absorb rounding so each row sums to one exactly
    T[np.arange(num_env), np.arange(num_env)] = 1.0 - off * (num_env - 1)
    return T


def with_overrides(spec: ScenarioSpec, *, N: Optional[int] = None, Nb: Optional[int] = None,
                   b0: Optional[Sequence[float]] = None,
                   accuracies: Optional[dict] = None) -> ScenarioSpec:
    """Return a copy of ``spec`` with horizon, prior or region accuracies replaced."""
    changes = {}
    if N is not None or Nb is not None:
        changes["horizon"] = HorizonSpec(N if N is not None else spec.horizon.N,
                                         Nb if Nb is not None else spec.horizon.Nb)
    if b0 is not None:
        changes["b0"] = np.asarray(b0, dtype=float)
    if accuracies:
        if spec.num_env_states != spec.num_observations:
            raise ScenarioValidationError("accuracy overrides need |O| = |E|")
        tables = spec.obs.tables.copy()
        for region, p in accuracies.items():
            if not 0 <= region < spec.R:
                raise ScenarioValidationError(f"region {region} out of range")
            tables[region] = symmetric_table(spec.num_env_states, float(p))
        changes["obs"] = ObservationModel(tables)
    return spec.replace(**changes) if changes else spec
