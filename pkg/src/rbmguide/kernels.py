"""Interaction kernels of the guidance-by-repulsion model.

Three radial kernels act on a displacement ``r``:

* ``a(r) = a_const`` -- velocity alignment between evaders,
* ``f(r) = f_amplitude * exp(-f_decay |r|^2)`` -- driver repulsion,
* ``g(r) = g_scale * (1 - g_core / |r|^2)`` -- evader cohesion with a
  repulsive core (``g(0) = 0`` by convention).

The scalar helpers prefixed with ``_`` are numba-compiled and shared with the
time-stepping kernels in :mod:`rbmguide.dynamics` and :mod:`rbmguide.adjoint`,
so the public functions here and the integrators evaluate identical
arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateInputError, InvalidParameterError

# squared-distance floor below which two evaders count as coincident
COLLISION_R2 = 1e-24


@dataclass(frozen=True)
class KernelParams:
    f_amplitude: float = 4.0
    f_decay: float = 8.0
    g_scale: float = 2.0
    g_core: float = 1.0 / 18.0
    a_const: float = 1.0

    def __post_init__(self):
        if not (self.f_amplitude > 0 and self.f_decay > 0):
            raise InvalidParameterError("f_amplitude and f_decay must be positive")
        if self.g_scale < 0 or self.a_const < 0:
            raise InvalidParameterError("g_scale and a_const must be nonnegative")
        if not self.g_core > 0:
            raise InvalidParameterError("g_core must be positive")

    @classmethod
    def for_population(cls, n_evaders: int, **overrides) -> "KernelParams":
        """Standard constants with the core radius scaled as 1/(3 sqrt(N))."""
        overrides.setdefault("g_core", 1.0 / (3.0 * math.sqrt(n_evaders)))
        return cls(**overrides)

    def as_tuple(self):
        return (self.a_const, self.f_amplitude, self.f_decay, self.g_scale, self.g_core)


@njit(cache=True, nogil=True)
def _f_of_r2(r2, amp, decay):
    return amp * math.exp(-decay * r2)


@njit(cache=True, nogil=True)
def _g_of_r2(r2, scale, core):
    if r2 == 0.0:
        return 0.0
    return scale * (1.0 - core / r2)


@njit(cache=True, nogil=True)
def _f_radial_slope(r2, fval, decay):
    # d/dr [f(r) r] = f I + s r r^T with s returned here
    return -2.0 * decay * fval


@njit(cache=True, nogil=True)
def _g_radial_slope(r2, scale, core):
    return 2.0 * scale * core / (r2 * r2)


def _as_vec(r):
    return np.asarray(r, dtype=float).reshape(-1)


def eval_a(r, kp: KernelParams) -> float:
    return float(kp.a_const)


def eval_f(r, kp: KernelParams) -> float:
    r = _as_vec(r)
    return float(_f_of_r2(float(r @ r), kp.f_amplitude, kp.f_decay))


def eval_g(r, kp: KernelParams) -> float:
    r = _as_vec(r)
    return float(_g_of_r2(float(r @ r), kp.g_scale, kp.g_core))


def force_and_jacobian(kernel: str, r, kp: KernelParams):
    """Return ``(k(r) r, d[k(r) r]/dr)`` for ``kernel`` in ``{"f", "g"}``.

    The Jacobian is the closed form ``k(r) I + r (grad k(r))^T``, which is
    symmetric for both radial kernels. For ``g`` a displacement shorter than
    1e-12 raises :class:`DegenerateInputError`.
    """
    r = _as_vec(r)
    d = r.size
    r2 = float(r @ r)
    if kernel == "f":
        kval = _f_of_r2(r2, kp.f_amplitude, kp.f_decay)
        slope = _f_radial_slope(r2, kval, kp.f_decay)
    elif kernel == "g":
        if r2 < COLLISION_R2:
            raise DegenerateInputError("g-force evaluated at coincident evaders")
        kval = _g_of_r2(r2, kp.g_scale, kp.g_core)
        slope = _g_radial_slope(r2, kp.g_scale, kp.g_core)
    else:
        raise ValueError(f"unknown kernel {kernel!r}; expected 'f' or 'g'")
    force = kval * r
    jac = kval * np.eye(d) + slope * np.outer(r, r)
    return force, jac
