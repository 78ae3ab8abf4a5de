from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from moclqr.model import load_scenario, scenario_from_dict

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "moclqr" / "scenarios"


def scenario_path(name: str) -> Path:
    return SCENARIOS / f"{name}.json"


@pytest.fixture(scope="session")
def toy():
    return load_scenario(scenario_path("toy"))


@pytest.fixture(scope="session")
def scen1():
    return load_scenario(scenario_path("scenario1_p085"))


@pytest.fixture(scope="session")
def scen1_p07():
    return load_scenario(scenario_path("scenario1_p07"))


def random_table(rng, E, O):
    T = rng.uniform(0.05, 1.0, size=(E, O))
    T /= T.sum(axis=1, keepdims=True)
    # keep entries strictly inside (0, 1) after normalisation
    return np.clip(T, 1e-3, 1 - 1e-3) / np.clip(T, 1e-3, 1 - 1e-3).sum(axis=1, keepdims=True)


def random_instance_dict(rng, *, n=None, N=None, Nb=None, R=2, E=2, O=2, identical=False):
    """Small random instance: half-space regions split along a random direction."""
    n = n or int(rng.integers(2, 5))
    d = int(rng.integers(1, 3))
    if N is None:
        # N <= 6 and at least one branching; P <= 4 keeps enumeration small
        Nb = Nb or int(rng.integers(1, 4))
        P = int(rng.integers(2, min(4, 6 // Nb) + 1))
        N = Nb * P
    A = np.eye(n) + 0.3 * rng.standard_normal((n, n))
    B = rng.standard_normal((n, d))
    box = 5.0
    Hx = np.vstack([np.eye(n), -np.eye(n)])
    hx = np.full(2 * n, box)
    Hu = np.vstack([np.eye(d), -np.eye(d)])
    hu = np.full(2 * d, 2.0)
    c = rng.standard_normal(n)
    c /= np.linalg.norm(c)
    t = float(rng.uniform(-0.5, 0.5))
    regions = [{"H": [c.tolist()], "h": [t]}, {"H": [(-c).tolist()], "h": [-t]}]
    regions = regions[:R] if R <= 2 else regions
    if R == 1:
        regions = [{"H": [[1.0] + [0.0] * (n - 1)], "h": [box]}]
    tables = [random_table(rng, E, O) for _ in range(R)]
    if identical:
        tables = [tables[0]] * R
    def psd(k, scale):
        M = rng.standard_normal((k, k))
        return (scale * (M @ M.T / k + 0.1 * np.eye(k))).tolist()
    goals = [{"xg": rng.uniform(-2, 2, n).tolist(), "ug": [0.0] * d} for _ in range(E)]
    b0 = rng.uniform(0.2, 1.0, E)
    b0 /= b0.sum()
    return {
        "system": {"A": A.tolist(), "B": B.tolist()},
        "state_set": {"H": Hx.tolist(), "h": hx.tolist()},
        "input_set": {"H": Hu.tolist(), "h": hu.tolist()},
        "regions": regions,
        "coverage_mode": "partition",
        "observation": {"num_obs": O, "tables": [T.tolist() for T in tables]},
        "transition": "static",
        "cost": {"Q": psd(n, 0.5), "R": psd(d, 0.1), "QN": psd(n, 5.0), "goals": goals},
        "horizon": {"N": N, "Nb": Nb},
        "x0": rng.uniform(-1, 1, n).tolist(),
        "b0": b0.tolist(),
    }


def random_instance(rng, **kw):
    return scenario_from_dict(random_instance_dict(rng, **kw), name="random")
