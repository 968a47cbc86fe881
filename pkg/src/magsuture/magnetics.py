"""Dipole-field magnetics: coil fields, needle wrench, motion gain, and
current allocation.

Each electromagnet is modeled as a point dipole sitting at the coil center
and pointing at the workspace origin.  The needle is a second dipole of
moment ``M`` along its heading.  With first-order (drag-dominated)
dynamics the planar velocity and spin rate are linear in the coil
currents, which is what the 2x4 motion-gain matrix captures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ROT90, heading

__all__ = [
    "AllocationResult",
    "Coil",
    "CoilArray",
    "SingularityError",
    "Wrench2D",
    "allocate_currents",
    "field_per_amp",
    "motion_gain",
    "wrench",
]

# Distances below this (mm) count as "needle on top of a coil".
_SINGULAR_DISTANCE_MM = 1e-9


class SingularityError(ValueError):
    """Raised when the needle position coincides with a coil center."""


@dataclass(frozen=True, eq=False)
class Coil:
    """One electromagnet: position in the world frame and dipole strength."""

    center_mm: np.ndarray
    magnet_constant: float = 1.0

    def __post_init__(self):
        arr = np.array(self.center_mm, dtype=float).reshape(2)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"coil center must be finite, got {self.center_mm!r}")
        if not np.linalg.norm(arr) > 0:
            raise ValueError("coil center must not sit at the workspace origin")
        arr.setflags(write=False)
        object.__setattr__(self, "center_mm", arr)
        if not (self.magnet_constant > 0):
            raise ValueError(
                f"magnet_constant must be > 0, got {self.magnet_constant}")


@dataclass(frozen=True, eq=False)
class CoilArray:
    """The four fixed electromagnets surrounding the dish."""

    coils: tuple

    def __post_init__(self):
        coils = tuple(self.coils)
        if len(coils) != 4:
            raise ValueError(f"expected exactly 4 coils, got {len(coils)}")
        object.__setattr__(self, "coils", coils)

    def __iter__(self):
        return iter(self.coils)

    def __len__(self):
        return len(self.coils)

    def check_outside_dish(self, dish_radius_mm):
        for i, coil in enumerate(self.coils):
            if np.linalg.norm(coil.center_mm) <= dish_radius_mm:
                raise ValueError(
                    f"coil {i} at {coil.center_mm.tolist()} lies inside the "
                    f"dish radius {dish_radius_mm} mm")

    @classmethod
    def default(cls, radius_mm=88.0, magnet_constant=1.0):
        """Four coils on the +x, +y, -x, -y axes at the given radius."""
        centers = [(radius_mm, 0.0), (0.0, radius_mm),
                   (-radius_mm, 0.0), (0.0, -radius_mm)]
        return cls(tuple(Coil(c, magnet_constant) for c in centers))


@dataclass(frozen=True, eq=False)
class Wrench2D:
    """Planar force (2,) and scalar torque about z."""

    force: np.ndarray
    torque: float


def _coil_terms(coil, r):
    """Common per-coil geometry: (delta, d_hat, r_hat)."""
    d = np.asarray(r, dtype=float) - coil.center_mm
    delta = float(np.hypot(d[0], d[1]))
    if delta < _SINGULAR_DISTANCE_MM:
        raise SingularityError(
            f"needle position {np.asarray(r).tolist()} coincides with the "
            f"coil at {coil.center_mm.tolist()}")
    d_hat = d / delta
    r_k = coil.center_mm
    r_hat = r_k / np.linalg.norm(r_k)
    return delta, d_hat, r_hat


def field_per_amp(coil, r):
    """Magnetic field at ``r`` per unit coil current.

    B/I = -(m / delta^3) (r_hat - 3 d_hat d_hat^T r_hat), where d is the
    vector from the coil center to ``r`` and r_hat is the unit vector of
    the coil position (the dipole axis points at the origin).
    """
    delta, d_hat, r_hat = _coil_terms(coil, r)
    return -(coil.magnet_constant / delta**3) * (r_hat - 3.0 * d_hat * (d_hat @ r_hat))


def _force_per_amp(coil, r, h, moment):
    """Analytic gradient force on the needle dipole, per unit current.

    F/I = -grad U with U = -M h^T B; expanding the dipole field gives
    F/I = (3 M m / delta^4) [ d_hat (P - 3 Q)
          + (I - d_hat d_hat^T)(h (d_hat.r_hat) + (h.d_hat) r_hat) ]
    with P = h.r_hat and Q = (h.d_hat)(d_hat.r_hat).
    """
    delta, d_hat, r_hat = _coil_terms(coil, r)
    hd = float(h @ d_hat)
    hr = float(h @ r_hat)
    dr = float(d_hat @ r_hat)
    scale = 3.0 * moment * coil.magnet_constant / delta**4
    vec = d_hat * (hr - 3.0 * hd * dr)
    vec = vec + (np.eye(2) - np.outer(d_hat, d_hat)) @ (h * dr + hd * r_hat)
    return scale * vec


def wrench(r, theta, currents, coils, spec):
    """Net magnetic force and torque on the needle for the given currents."""
    currents = np.asarray(currents, dtype=float).reshape(len(coils))
    h = heading(theta)
    moment = spec.magnetic_moment
    force = np.zeros(2)
    torque = 0.0
    for coil, amp in zip(coils, currents):
        force += amp * _force_per_amp(coil, r, h, moment)
        b = field_per_amp(coil, r)
        torque += amp * moment * (h[0] * b[1] - h[1] * b[0])
    return Wrench2D(force=force, torque=torque)


def motion_gain(r, theta, coils, spec, drag):
    """2x4 gain g mapping coil currents to (forward speed v, spin rate w).

    Row 1, coil k:  (3 M m_k / c_t) (2 (d.h)(h.r) + r.d - 5 (d.h)^2 (d.r)) / delta^4
    Row 2, coil k:  (M m_k / c_r) (h.S r - 3 (h.S d)(d.r)) / delta^3
    with d, r the unit vectors d_hat, r_hat of ``field_per_amp`` and S the
    +90 degree rotation.  [v; w] = g @ currents.
    """
    h = heading(theta)
    moment = spec.magnetic_moment
    sh = ROT90.T @ h  # h^T S == (S^T h)^T
    g = np.zeros((2, len(coils)))
    for k, coil in enumerate(coils):
        delta, d_hat, r_hat = _coil_terms(coil, r)
        hd = float(h @ d_hat)
        hr = float(h @ r_hat)
        dr = float(d_hat @ r_hat)
        m_k = coil.magnet_constant
        g[0, k] = (3.0 * moment * m_k / drag.c_t) * (
            2.0 * hd * hr + dr - 5.0 * hd * hd * dr) / delta**4
        g[1, k] = (moment * m_k / drag.c_r) * (
            float(sh @ r_hat) - 3.0 * float(sh @ d_hat) * dr) / delta**3
    return g


@dataclass(frozen=True, eq=False)
class AllocationResult:
    """Coil currents plus the saturation/conditioning flags."""

    currents: np.ndarray
    saturated: bool = False
    degraded: bool = False


def allocate_currents(r, theta, v_cmd, w_cmd, coils, spec, drag,
                      i_max=10.0, damping=1e-8, cond_limit=1e12):
    """Solve for coil currents realizing the commanded (v, w).

    Uses the damped right pseudo-inverse I = g^T (g g^T + damping^2 I)^-1 cmd.
    If the currents exceed ``i_max`` they are scaled down uniformly so the
    commanded direction in (v, w) space is preserved.  A near-singular
    g g^T is reported through the ``degraded`` flag instead of failing.
    """
    if not (i_max > 0):
        raise ValueError(f"i_max must be > 0, got {i_max}")
    cmd = np.array([float(v_cmd), float(w_cmd)])
    g = motion_gain(r, theta, coils, spec, drag)
    gram = g @ g.T
    degraded = False
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > cond_limit:
        degraded = True
    try:
        currents = g.T @ np.linalg.solve(
            gram + damping**2 * np.eye(2), cmd)
    except np.linalg.LinAlgError:
        currents = np.linalg.pinv(g) @ cmd
        degraded = True
    saturated = False
    peak = float(np.max(np.abs(currents)))
    if peak > i_max:
        currents = currents * (i_max / peak)
        saturated = True
    return AllocationResult(currents=currents, saturated=saturated,
                            degraded=degraded)
