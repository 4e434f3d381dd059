"""Plant models and probe signals.

Two concrete plants: a forced van der Pol oscillator used by the prediction
benchmark, and the five-state longitudinal subsystem of a deep-submergence
rescue vehicle (DSRV) used by the depth-control experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

_VDP_VARIANTS = ("default", "korda")


class VanDerPol:
    """Forced van der Pol oscillator, state (x1, x2), scalar forcing u.

    The ``default`` variant is
        x1' = -2 x2
        x2' = 0.8 x1 + 10 x1^2 x2 - 2 x2 + u
    whose cubic term feeds energy into large-amplitude states, so trajectories
    are only guaranteed bounded on short horizons.  ``korda`` selects the
    widely used damped benchmark form
        x1' = 2 x2
        x2' = -0.8 x1 + 2 x2 - 10 x1^2 x2 + u.
    """

    state_dim = 2
    input_dim = 1
    state_names = ("x1", "x2")
    input_names = ("u",)

    def __init__(self, variant: str = "default"):
        if variant not in _VDP_VARIANTS:
            raise ValueError(f"variant must be one of {_VDP_VARIANTS}, got {variant!r}")
        self.variant = variant

    def rhs(self, x, u, t: float = 0.0) -> np.ndarray:
        x1 = float(x[0])
        x2 = float(x[1])
        f = float(u[0]) if np.ndim(u) else float(u)
        if self.variant == "korda":
            return np.array([2.0 * x2, -0.8 * x1 + 2.0 * x2 - 10.0 * x1 * x1 * x2 + f])
        return np.array([-2.0 * x2, 0.8 * x1 + 10.0 * x1 * x1 * x2 - 2.0 * x2 + f])


@dataclass(frozen=True)
class DsrvParameters:
    """Hydrodynamic coefficients of the DSRV longitudinal subsystem.

    U0 is the constant cruise speed (m/s); m11..m22 are the effective
    mass-matrix entries; Zq, Zw, Zdelta the heave-force coefficients;
    Mq, Mw, Mtheta, Mdelta the pitch-moment coefficients; L the hull length.
    Mtheta defaults to -0.156276 divided by the squared cruise speed.
    """

    U0: float = 4.11
    m11: float = 0.067936
    m12: float = 0.000130
    m21: float = 0.000146
    m22: float = 0.003498
    Zq: float = -0.017455
    Zw: float = -0.043938
    Zdelta: float = 0.027695
    Mq: float = -0.01131
    Mw: float = 0.011175
    Mtheta: float = -0.156276 / (4.11 * 4.11)
    Mdelta: float = -0.012797
    L: float = 5.0

    def __post_init__(self):
        if self.det_m == 0.0:
            raise ValueError("mass matrix is singular (det M == 0)")

    @property
    def det_m(self) -> float:
        return self.m11 * self.m22 - self.m12 * self.m21

    @classmethod
    def from_mapping(cls, mapping) -> "DsrvParameters":
        """Build parameters from a {name: value} mapping; unknown names error."""
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown DSRV parameter(s): {sorted(unknown)}")
        return replace(cls(), **{k: float(v) for k, v in mapping.items()})


class Dsrv:
    """DSRV longitudinal dynamics with state (w, q, x, z, theta), input delta.

    w: heave velocity, q: pitch rate, x/z: horizontal position and depth,
    theta: pitch angle.  Heave force Z and pitch moment M are linear in
    (w, q, theta, delta); the position kinematics rotate the cruise speed
    through the pitch angle.
    """

    state_dim = 5
    input_dim = 1
    state_names = ("w", "q", "x", "z", "theta")
    input_names = ("delta",)

    def __init__(self, params: DsrvParameters | None = None):
        self.params = params if params is not None else DsrvParameters()

    def rhs(self, x, u, t: float = 0.0) -> np.ndarray:
        p = self.params
        w = float(x[0])
        q = float(x[1])
        theta = float(x[4])
        delta = float(u[0]) if np.ndim(u) else float(u)
        force = p.Zq * q + p.Zw * w + p.Zdelta * delta
        moment = p.Mq * q + p.Mw * w + p.Mtheta * theta + p.Mdelta * delta
        det = p.det_m
        return np.array(
            [
                (p.m22 * force - p.m12 * moment) / det,
                (-p.m21 * force + p.m11 * moment) / det,
                p.U0 * np.cos(theta) + w * np.sin(theta),
                -p.U0 * np.sin(theta) + w * np.cos(theta),
                q,
            ]
        )


@dataclass(frozen=True)
class SquareWave:
    """Square wave: +amplitude on the first half of each period, -amplitude after."""

    period: float
    amplitude: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.period <= 0.0:
            raise ValueError("period must be positive")

    def __call__(self, t: float) -> float:
        tau = (t - self.phase) % self.period
        return self.amplitude if tau < 0.5 * self.period else -self.amplitude


def make_plant(name: str, variant: str = "default", params: dict | None = None):
    """Construct a plant by name ('vdp' or 'dsrv')."""
    if name == "vdp":
        return VanDerPol(variant=variant)
    if name == "dsrv":
        return Dsrv(DsrvParameters.from_mapping(params) if params else None)
    raise ValueError(f"unknown plant {name!r} (expected 'vdp' or 'dsrv')")
