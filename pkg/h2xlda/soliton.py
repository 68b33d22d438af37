"""Radial ground state of the large-alpha limit problem.

The normalised equation

    -1/2 u'' - u'/r + u - u^(5/3) = 0,   u'(0) = 0,   u -> 0

is solved by shooting on u(0): bisection separates initial values whose
solution crosses zero from those that turn back up, then the inner solution
is matched at r_match to a tail integrated inwards from C e^(-sqrt(2) r)/r.
The mass-one solution of

    -1/2 Lap(phi) - 4/3 |phi|^(2/3) phi + E phi = 0,   int phi^2 = 1

is phi(x) = beta u(gamma x) with gamma^2 = E, beta = (3/4 E)^(3/2) and
E = (64 / (27 M0))^(2/3), M0 the mass of u.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from h2xlda.defaults import defaults
from h2xlda.exceptions import ConvergenceError, StateError
from h2xlda.operators import weighted_mass_action
from h2xlda.scf import OrbitalState, XLDASystem, total_energy

log = logging.getLogger(__name__)

__all__ = [
    "SolitonConfig",
    "RadialProfile",
    "RescaleReport",
    "solve_normalized_profile",
    "rescale_to_mass_one",
    "profile_integrals",
    "F_energy",
    "dilate",
    "compare_rescaled",
    "load_oracle",
    "pin_oracle",
]

ORACLE_PATH = Path(__file__).resolve().parent / "data" / "soliton_oracle.json"
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SolitonConfig:
    r_max: float = 20.0
    step: float = 1e-3
    bracket: tuple = (1.0, 8.0)
    tolerance: float = 1e-13

    def __post_init__(self):
        if self.r_max < 20.0:
            raise ValueError(f"radial grid must reach r_max >= 20, got {self.r_max}")
        if not 0 < self.step <= 1e-3:
            raise ValueError(f"radial step must lie in (0, 1e-3], got {self.step}")
        lo, hi = self.bracket
        if not 0 < lo < hi:
            raise ValueError(f"bad shooting bracket {self.bracket}")
        object.__setattr__(self, "bracket", (float(lo), float(hi)))

    @classmethod
    def from_settings(cls, **overrides):
        values = dict(
            r_max=float(defaults("soliton.r_max")),
            step=float(defaults("soliton.step")),
            bracket=tuple(defaults("soliton.bracket")),
            tolerance=float(defaults("soliton.tolerance")),
        )
        values.update(overrides)
        return cls(**values)

    def as_dict(self):
        return {**asdict(self), "bracket": list(self.bracket)}


@dataclass
class RadialProfile:
    """phi(r) and phi'(r) on a uniform radial grid, solving
    -1/2 Lap(phi) - coefficient |phi|^(2/3) phi + E phi = 0."""

    r: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    E: float
    coefficient: float = 1.0
    center_value: float = field(init=False)

    def __post_init__(self):
        self.center_value = float(self.values[0])

    @property
    def mass(self):
        return profile_integrals(self)["mass"]

    def validate(self):
        if np.any(self.values <= 0):
            raise StateError("radial profile is not strictly positive")
        if np.any(np.diff(self.values) >= 0):
            raise StateError("radial profile is not strictly decreasing")
        if not self.E > 0:
            raise StateError(f"non-positive Lagrange multiplier {self.E}")
        return self

    def __call__(self, radius):
        """phi at arbitrary radii (zero beyond the grid)."""
        return np.interp(radius, self.r, self.values, right=0.0)

    def ode_residual(self):
        """Pointwise residual of the radial equation; u'' from fourth-order
        differences of u'. The two grid points at each end are skipped."""
        h = self.r[1] - self.r[0]
        v = self.derivative
        second = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
        r = self.r[2:-2]
        u = self.values[2:-2]
        return -0.5 * (second + 2 * v[2:-2] / r) - self.coefficient * np.abs(u) ** (2.0 / 3.0) * u + self.E * u


@dataclass
class RescaleReport:
    alpha: float
    centers: list
    center_errors: list
    h1_distances: list
    energy_ratio: float
    reference_ratio: float

    def as_dict(self):
        return asdict(self)


def _rhs(r, y):
    u, v = y
    return [v, 2.0 * (u - np.abs(u) ** (2.0 / 3.0) * u) - 2.0 * v / r]


def _series_start(a, r0):
    c = (a - a ** (5.0 / 3.0)) / 3.0
    return [a + c * r0**2, 2.0 * c * r0]


def _crosses_zero(r, y):
    return y[0]


_crosses_zero.terminal = True
_crosses_zero.direction = -1


def _turns_up(r, y):
    return y[1]


_turns_up.terminal = True
_turns_up.direction = 1


def _shoot(a, cfg: SolitonConfig, r_end=None, dense=False):
    r0 = min(cfg.step, 1e-3)
    return integrate.solve_ivp(
        _rhs,
        (r0, cfg.r_max if r_end is None else r_end),
        _series_start(a, r0),
        method="DOP853",
        rtol=1e-13,
        atol=1e-15,
        events=None if dense else (_crosses_zero, _turns_up),
        dense_output=dense,
    )


def _outcome(a, cfg):
    """+1 when the solution crosses zero (u(0) too large), -1 otherwise."""
    sol = _shoot(a, cfg)
    if sol.t_events[0].size:
        return 1, float(sol.t_events[0][0])
    if sol.t_events[1].size:
        return -1, float(sol.t_events[1][0])
    return -1, float(sol.t[-1])


def _bisect(cfg: SolitonConfig):
    lo, hi = cfg.bracket
    history = []
    for a in (lo, hi):
        history.append((a, _outcome(a, cfg)[0]))
    if history[0][1] != -1 or history[1][1] != 1:
        raise ConvergenceError(f"shooting bracket {cfg.bracket} does not separate the ground state: {history}", history)
    while hi - lo > cfg.tolerance * hi:
        mid = 0.5 * (lo + hi)
        outcome, where = _outcome(mid, cfg)
        history.append((mid, outcome))
        if outcome > 0:
            hi = mid
        else:
            lo = mid
    log.debug("shooting bisection: %d steps, u(0) in [%.15f, %.15f]", len(history), lo, hi)
    return 0.5 * (lo + hi), history


def _tail(log_c, r_match, cfg: SolitonConfig):
    C = math.exp(log_c)
    r = cfg.r_max
    decay = C * math.exp(-SQRT2 * r)
    start = [decay / r, -decay * (SQRT2 * r + 1.0) / r**2]
    return integrate.solve_ivp(_rhs, (r, r_match), start, method="DOP853", rtol=1e-13, atol=1e-30, dense_output=True)


def solve_normalized_profile(cfg: Optional[SolitonConfig] = None) -> RadialProfile:
    """Ground state u of the normalised radial equation on [0, r_max]."""
    cfg = cfg or SolitonConfig.from_settings()
    a, history = _bisect(cfg)

    # match where the bisected solution is still accurate and the tail small
    trial = _shoot(a, cfg, r_end=10.0, dense=True)
    grid = np.linspace(trial.t[0], trial.t[-1], 2001)
    below = np.flatnonzero(trial.sol(grid)[0] < 1e-2 * a)
    r_match = float(grid[below[0]]) if below.size else 6.0
    u_m, v_m = trial.sol(r_match)
    log_c0 = math.log(u_m * r_match * math.exp(SQRT2 * r_match))

    def mismatch(x):
        inner = _shoot(x[0], cfg, r_end=r_match, dense=True).y[:, -1]
        outer = _tail(x[1], r_match, cfg).y[:, -1]
        return [(inner[0] - outer[0]) / u_m, (inner[1] - outer[1]) / abs(v_m)]

    solution, info, status, message = optimize.fsolve(mismatch, [a, log_c0], xtol=1e-14, full_output=True)
    if status != 1:
        raise ConvergenceError(f"tail matching failed at r={r_match:.3f}: {message}", history)
    a, log_c = float(solution[0]), float(solution[1])

    n = int(round(cfg.r_max / cfg.step))
    r = np.linspace(0.0, n * cfg.step, n + 1)
    values = np.empty_like(r)
    derivative = np.empty_like(r)
    inner = _shoot(a, cfg, r_end=r_match, dense=True)
    outer = _tail(log_c, r_match, cfg)
    r0 = inner.t[0]
    near = r < r0
    values[near] = [_series_start(a, x)[0] for x in r[near]]
    derivative[near] = [_series_start(a, x)[1] for x in r[near]]
    mid = (r >= r0) & (r <= r_match)
    values[mid], derivative[mid] = inner.sol(r[mid])
    far = r > r_match
    values[far], derivative[far] = outer.sol(r[far])

    profile = RadialProfile(r=r, values=values, derivative=derivative, E=1.0, coefficient=1.0)
    log.info("normalised profile: u(0)=%.12f, M0=%.12f, matched at r=%.3f", a, profile.mass, r_match)
    return profile.validate()


def rescale_to_mass_one(profile: RadialProfile) -> RadialProfile:
    """phi(x) = beta u(gamma x), the mass-one solution with coefficient 4/3."""
    M0 = profile.mass
    E = (64.0 / (27.0 * M0)) ** (2.0 / 3.0)
    gamma = math.sqrt(E)
    beta = (0.75 * E) ** 1.5
    return RadialProfile(
        r=profile.r / gamma,
        values=beta * profile.values,
        derivative=beta * gamma * profile.derivative,
        E=E,
        coefficient=4.0 / 3.0,
    )


def profile_integrals(profile: RadialProfile, stride=1):
    """mass, kinetic T_k = 1/2 int |grad phi|^2 and P = int |phi|^(8/3), by Simpson's rule."""
    r = profile.r[::stride]
    u = profile.values[::stride]
    v = profile.derivative[::stride]
    shell = 4.0 * np.pi * r**2
    return {
        "mass": float(integrate.simpson(shell * u**2, x=r)),
        "kinetic": 0.5 * float(integrate.simpson(shell * v**2, x=r)),
        "exchange": float(integrate.simpson(shell * np.abs(u) ** (8.0 / 3.0), x=r)),
    }


def F_energy(profile: RadialProfile, stride=1, check_mass=True) -> float:
    """F(phi) = 1/2 int |grad phi|^2 - int |phi|^(8/3)."""
    terms = profile_integrals(profile, stride)
    if check_mass and abs(terms["mass"] - 1.0) > 1e-6:
        raise StateError(f"F is defined on mass-one profiles, got mass {terms['mass']:.8f}")
    return terms["kinetic"] - terms["exchange"]


def dilate(profile: RadialProfile, t: float) -> RadialProfile:
    """L2-preserving dilation t^(3/2) phi(t x)."""
    if not t > 0:
        raise ValueError(f"dilation factor must be positive, got {t}")
    return replace(profile, r=profile.r / t, values=t**1.5 * profile.values, derivative=t**2.5 * profile.derivative)


def _centroid(system: XLDASystem, c):
    charges = weighted_mass_action(system.mesh, c, c)
    return (charges @ system.mesh.vertices) / charges.sum()


def compare_rescaled(
    system: XLDASystem,
    state: OrbitalState,
    profile: RadialProfile,
    box_half_width=None,
    box_points=None,
) -> RescaleReport:
    """H1 distance between alpha^(-3/2) psi(y/alpha + x_s) and phi, per spin.

    x_s is the density centroid of spin s. Both are sampled on a tensor grid
    [-L, L]^3 in the scaled variable y; the distance is taken over that box.
    Center errors are |x_+ - R e_1| and |x_- + R e_1|.
    """
    L = float(defaults("soliton.box_half_width")) if box_half_width is None else box_half_width
    n = int(defaults("soliton.box_points")) if box_points is None else box_points
    alpha = system.alpha
    if not alpha > 0:
        raise StateError("rescaled comparison needs alpha > 0")
    mesh = system.mesh

    axis = np.linspace(-L, L, n)
    h = axis[1] - axis[0]
    Y = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    phi = profile(np.linalg.norm(Y, axis=1)).reshape(n, n, n)

    centers, errors, distances = [], [], []
    targets = (np.array([state.R, 0.0, 0.0]), np.array([-state.R, 0.0, 0.0]))
    for c, target in zip(state.coefficients, targets):
        center = _centroid(system, c)
        if np.any(np.abs(center) >= mesh.half_extent):
            raise StateError(f"density centroid {center} lies outside the domain")
        X = Y / alpha + center
        inside = np.all(np.abs(X) < mesh.half_extent, axis=1)
        psi = np.zeros(len(X))
        psi[inside] = mesh.interpolate_at(c, X[inside])
        psi = (alpha**-1.5 * psi).reshape(n, n, n)
        if psi.sum() < 0:
            psi = -psi
        diff = psi - phi
        grads = np.gradient(diff, h)
        norm2 = (np.sum(diff**2) + sum(np.sum(g**2) for g in grads)) * h**3
        centers.append([float(x) for x in center])
        errors.append(float(np.linalg.norm(center - target)))
        distances.append(float(math.sqrt(norm2)))

    energy = total_energy(system, state).total
    report = RescaleReport(
        alpha=alpha,
        centers=centers,
        center_errors=errors,
        h1_distances=distances,
        energy_ratio=energy / alpha**2,
        reference_ratio=2.0 * F_energy(profile),
    )
    log.info("alpha=%s: H1 distances %s, E/alpha^2=%.6f (2F=%.6f)", alpha, distances, report.energy_ratio, report.reference_ratio)
    return report


def load_oracle(path=None):
    """Pinned constants of the normalised profile, or None when not pinned yet."""
    path = Path(path) if path else ORACLE_PATH
    if not path.exists():
        return None
    with path.open(encoding="utf-8") as f:
        return json.load(f)


def pin_oracle(profile: RadialProfile, cfg: SolitonConfig, path=None):
    path = Path(path) if path else ORACLE_PATH
    mass_one = rescale_to_mass_one(profile)
    data = {
        "M0": profile.mass,
        "u0": profile.center_value,
        "E": mass_one.E,
        "F": F_energy(mass_one),
        "config": cfg.as_dict(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
    log.info(f"Pinned soliton oracle constants to {path}")
    return data
