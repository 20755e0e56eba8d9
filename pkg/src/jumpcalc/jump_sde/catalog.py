"""Registered model builders, addressable by name from experiment configs."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..errors import UnresolvedReferenceError
from ..point_measure import AtomicSpace
from .models import AdditiveModel, ThinnedModel


def _identity_jump(marks, atoms):
    return np.asarray(marks, dtype=float)


def linear(A=((-1.0, 0.5), (-0.5, -1.0)), b=None, atoms=((1.0, 0.0), (0.0, 1.0)), weights=(1.0, 1.0),
           eps: float = 0.0, name: str = "linear") -> AdditiveModel:
    """a(x) = A x + b + eps sin(x) (componentwise); jumps c(u) = u over atomic marks."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    b = np.zeros(m) if b is None else np.asarray(b, dtype=float).reshape(m)
    eps = float(eps)

    def drift(x):
        return x @ A.T + b + eps * np.sin(x)

    def jac(x):
        return A[None] + eps * np.cos(x)[:, :, None] * np.eye(m)[None]

    space = AtomicSpace(np.asarray(atoms, dtype=float).reshape(-1, m), weights, name=f"{name}:marks")
    return AdditiveModel(name, m, drift, jac, _identity_jump, space,
                         params={"A": A.tolist(), "b": b.tolist(), "eps": eps,
                                 "atoms": np.asarray(atoms, dtype=float).tolist(), "weights": list(weights)})


def sin_perturbed(n: float, **kw) -> AdditiveModel:
    """Family a^n = a + n^{-1} sin over a linear base model."""
    kw.setdefault("name", f"sin_perturbed[{n}]")
    return linear(eps=1.0 / float(n), **kw)


def parabola_levy(K: int = 20, drift_scale: float = 0.0, name: str = "parabola_levy") -> AdditiveModel:
    """Unit-weight atoms z_k = (1/k!, 1/(k!)^2), k = 1..K, jump c(u) = u, drift a(x) = drift_scale x."""
    z = np.array([[1 / math.factorial(k), 1 / math.factorial(k) ** 2] for k in range(1, K + 1)])
    s = float(drift_scale)
    space = AtomicSpace(z, np.ones(K), name=f"{name}:atoms")
    return AdditiveModel(name, 2, lambda x: s * x, lambda x: np.broadcast_to(s * np.eye(2), (len(x), 2, 2)).copy(),
                         _identity_jump, space, params={"K": K, "drift_scale": s})


def arctan_switch(w1: float = 1.0, w2: float = 1.0, name: str = "arctan_switch") -> ThinnedModel:
    """Two marks u1, u2 at unit rate each: c(x, u1) = 1, c(x, u2) = arctan x, no drift."""
    base = AtomicSpace([[1.0], [2.0]], [w1, w2], name=f"{name}:marks")

    def jump(x, v, atoms):
        return np.where((atoms == 0)[:, None], 1.0, np.arctan(x))

    def jump_jac(x, v, atoms):
        return np.where((atoms == 0)[:, None, None], 0.0, (1.0 / (1.0 + x * x))[:, :, None])

    return ThinnedModel(
        name, 1, lambda x: np.zeros_like(x), lambda x: np.zeros((len(x), 1, 1)),
        rate=lambda x, v, atoms: np.ones(len(atoms)), envelope=lambda v: np.ones(len(v)),
        jump=jump, jump_jac=jump_jac, base=base,
        gamma=lambda v: np.full(len(v), max(1.0, math.pi / 2)),
        params={"w1": w1, "w2": w2}, metadata={"b0": 1.0, "beta1": 0.0, "gamma1": 0.0},
    )


def thinned_smooth(marks=(0.6, -0.9), weights=(1.5, 1.0), beta=(1.0, 0.8), kappa: float = 0.3,
                   constant_rate: bool = False, name: str = "thinned_smooth") -> ThinnedModel:
    """1-d model with bounded drift -tanh(x) + 0.2 and state-dependent rate and jumps.

    b(x, v) = beta(v) (0.5 + 0.5 / (1 + x^2)) unless ``constant_rate`` (then b = beta);
    c(x, v) = v (1 + kappa sin x).
    """
    vv = np.asarray(marks, dtype=float).reshape(-1, 1)
    beta_arr = np.asarray(beta, dtype=float)
    base = AtomicSpace(vv, weights, name=f"{name}:marks")
    kappa = float(kappa)

    def env(v):
        return beta_arr[_atom_of(vv, v)]

    def rate(x, v, atoms):
        bt = beta_arr[atoms]
        return bt if constant_rate else bt * (0.5 + 0.5 / (1.0 + x[:, 0] ** 2))

    def jump(x, v, atoms):
        return v[:, :1] * (1.0 + kappa * np.sin(x))

    def jump_jac(x, v, atoms):
        return (v[:, :1] * kappa * np.cos(x))[:, :, None]

    return ThinnedModel(
        name, 1, lambda x: -np.tanh(x) + 0.2, lambda x: (-1.0 / np.cosh(x) ** 2)[:, :, None],
        rate=rate, envelope=env, jump=jump, jump_jac=jump_jac, base=base,
        gamma=lambda v: np.abs(v[:, 0]) * (1.0 + abs(kappa)),
        params={"marks": list(marks), "weights": list(weights), "beta": list(beta), "kappa": kappa,
                "constant_rate": constant_rate},
        metadata={"b0": 0.0, "beta1": float(beta_arr.max()), "gamma1": float(np.max(np.abs(vv)) * (1 + abs(kappa)))},
    )


def _atom_of(atoms: np.ndarray, v: np.ndarray) -> np.ndarray:
    # envelope callables receive mark values; map them back to the nearest atom
    return np.argmin(np.abs(np.asarray(v, dtype=float).reshape(-1, 1) - atoms[:, 0][None, :]), axis=1)


def table(atoms, weights, A, b=None, name: str = "table") -> AdditiveModel:
    """User-supplied jump table with affine drift."""
    return linear(A=A, b=b, atoms=atoms, weights=weights, name=name)


CATALOG: dict[str, Callable] = {
    "linear": linear,
    "affine": linear,
    "sin_perturbed": sin_perturbed,
    "parabola_levy": parabola_levy,
    "arctan_switch": arctan_switch,
    "thinned_smooth": thinned_smooth,
    "table": table,
}


def build(name: str, params: dict | None = None):
    if name not in CATALOG:
        raise UnresolvedReferenceError([f"model: {name!r} is not registered (known: {sorted(CATALOG)})"])
    return CATALOG[name](**(params or {}))
