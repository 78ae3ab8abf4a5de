"""Belief coordinates: normalized b, unnormalized v and inverse z.

For a static environment the three are tied together by ``v = b * P(o-seq)``
and ``z = 1 / v``; the update matrices are

* ``Theta(o, i) = diag(M_i[:, o])``
* ``A_e(o, i) = Theta(o, i) @ Omega``
* ``D_i(o) = diag(1 / M_i[:, o])``
"""
from __future__ import annotations

import numpy as np

from .model import ObservationModel, ScenarioSpec, TransitionModel

LIKELIHOOD_FLOOR = 1e-300


class BeliefError(ArithmeticError):
    pass


def _check_index(obs: ObservationModel, region: int, o: int):
    if not 0 <= region < obs.num_regions:
        raise IndexError(f"region {region} out of range [0, {obs.num_regions})")
    if not 0 <= o < obs.num_observations:
        raise IndexError(f"observation {o} out of range [0, {obs.num_observations})")


def theta_matrix(obs: ObservationModel, region: int, o: int) -> np.ndarray:
    _check_index(obs, region, o)
    return np.diag(obs.tables[region, :, o])


def ae_matrix(obs: ObservationModel, trans: TransitionModel, region: int, o: int) -> np.ndarray:
    _check_index(obs, region, o)
    if trans.is_static:
        return theta_matrix(obs, region, o)
    return obs.tables[region, :, o][:, None] * trans.omega


def belief_update(obs: ObservationModel, trans: TransitionModel, b, region: int, o: int):
    """Bayes filter step. Returns ``(posterior, P(o | x, b))``."""
    v = ae_matrix(obs, trans, region, o) @ np.asarray(b, dtype=float)
    lik = float(v.sum())
    if lik < LIKELIHOOD_FLOOR:
        raise BeliefError(f"observation {o} has likelihood {lik:g} in region {region}")
    return v / lik, lik


def unnormalized_update(obs: ObservationModel, trans: TransitionModel, v, region: int, o: int) -> np.ndarray:
    return ae_matrix(obs, trans, region, o) @ np.asarray(v, dtype=float)


def inverse_update(obs: ObservationModel, z, region: int, o: int) -> np.ndarray:
    """``z' = D_region(o) z``; only meaningful for a static environment."""
    _check_index(obs, region, o)
    return np.asarray(z, dtype=float) / obs.tables[region, :, o]


def d_matrix(obs: ObservationModel, region: int, o: int) -> np.ndarray:
    _check_index(obs, region, o)
    return np.diag(1.0 / obs.tables[region, :, o])


def ce_matrix(spec: ScenarioSpec, k: int, region: int, o: int) -> np.ndarray:
    """Belief propagation matrix at plan step k: A_e on positive multiples of Nb, Omega otherwise."""
    if not 0 <= k <= spec.horizon.N:
        raise IndexError(f"step {k} outside [0, {spec.horizon.N}]")
    if k > 0 and k % spec.horizon.Nb == 0:
        return ae_matrix(spec.obs, spec.trans, region, o)
    return np.array(spec.trans.omega)


def max_inverse_gain(obs: ObservationModel) -> float:
    """Largest scalar entry over all D_i(o)."""
    return float(np.max(1.0 / obs.tables))


def z_upper_bound(spec: ScenarioSpec, z0, k: int) -> np.ndarray:
    """Elementwise bound on z after k - 1 inverse updates started from z0."""
    if k < 1:
        raise ValueError("z_upper_bound is defined for k >= 1")
    return max_inverse_gain(spec.obs) ** (k - 1) * np.asarray(z0, dtype=float)


def propagate_unnormalized(obs, trans, b0, regions, observations) -> np.ndarray:
    v = np.asarray(b0, dtype=float)
    for r, o in zip(regions, observations):
        v = unnormalized_update(obs, trans, v, r, o)
    return v


def propagate_inverse(obs, z0, regions, observations) -> np.ndarray:
    z = np.asarray(z0, dtype=float)
    for r, o in zip(regions, observations):
        z = inverse_update(obs, z, r, o)
    return z
