"""Closed-form decaying solution for convergence studies.

Each velocity component is a sum of separable terms
``c * exp(-k*b*t) * X(x) * Y(y)`` with polynomial X, Y, so spatial and time
derivatives follow from polynomial calculus.  Pressures are identically
zero; the forcing is the Navier-Stokes residual of the exact velocity with
the physical viscosity.  The fields are divergence free, satisfy the rigid
lid at y = 0 and balance the friction condition on the interface exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P


@dataclass(frozen=True)
class _Term:
    coef: float
    rate: int                 # time factor exp(-rate * b * t)
    xc: tuple[float, ...]     # polynomial coefficients, ascending
    yc: tuple[float, ...]


@dataclass(frozen=True)
class ManufacturedProblem:
    a: float
    kappa: float
    nu1: float
    nu2: float
    b: float = 0.5
    _terms: tuple = field(init=False, repr=False, compare=False, default=())

    def __post_init__(self):
        if self.a <= 0 or self.kappa <= 0:
            raise ValueError("amplitude and friction must be positive")
        if self.nu1 <= 0 or self.nu2 <= 0:
            raise ValueError("viscosities must be positive")
        c1 = self.a * self.nu1
        c2 = self.a * self.nu1 / np.sqrt(self.kappa * self.a)
        r = self.nu1 / self.nu2
        quartic = (0.0, 0.0, 1.0, -2.0, 1.0)        # x^2 (1-x)^2
        cubic = (0.0, -1.0, 3.0, -2.0)              # x (1-x) (2x-1)
        terms = (
            (  # domain 1
                (_Term(c1, 2, quartic, (1.0, 1.0)),
                 _Term(c2, 1, (0.0, 1.0, -1.0), (1.0,))),
                (_Term(c1, 2, cubic, (0.0, 2.0, 1.0)),
                 _Term(c2, 1, (-1.0, 2.0), (0.0, 1.0))),
            ),
            (  # domain 2
                (_Term(c1, 2, quartic, (1.0, r)),),
                (_Term(c1, 2, cubic, (0.0, 2.0, r)),),
            ),
        )
        object.__setattr__(self, "_terms", terms)

    def _component(self, domain, comp, t, x, y, dx=0, dy=0, dt=False):
        out = np.zeros_like(x)
        for term in self._terms[domain][comp]:
            xc, yc = term.xc, term.yc
            for _ in range(dx):
                xc = P.polyder(xc)
            for _ in range(dy):
                yc = P.polyder(yc)
            factor = term.coef * np.exp(-term.rate * self.b * t)
            if dt:
                factor *= -term.rate * self.b
            out += factor * P.polyval(x, xc) * P.polyval(y, yc)
        return out


def exact_velocity(problem: ManufacturedProblem, domain: int, t: float,
                   points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([problem._component(domain, c, t, x, y) for c in (0, 1)],
                    axis=1)


def exact_gradient(problem: ManufacturedProblem, domain: int, t: float,
                   points: np.ndarray) -> np.ndarray:
    """Gradient with component [i, j] = d u_i / d x_j, shape (n, 2, 2)."""
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    g = np.empty((len(x), 2, 2))
    for c in (0, 1):
        g[:, c, 0] = problem._component(domain, c, t, x, y, dx=1)
        g[:, c, 1] = problem._component(domain, c, t, x, y, dy=1)
    return g


def time_derivative(problem, domain, t, points):
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([problem._component(domain, c, t, x, y, dt=True)
                     for c in (0, 1)], axis=1)


def laplacian(problem, domain, t, points):
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    out = np.empty((len(x), 2))
    for c in (0, 1):
        out[:, c] = (problem._component(domain, c, t, x, y, dx=2)
                     + problem._component(domain, c, t, x, y, dy=2))
    return out


def divergence(problem, domain, t, points):
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    return (problem._component(domain, 0, t, x, y, dx=1)
            + problem._component(domain, 1, t, x, y, dy=1))


def forcing(problem: ManufacturedProblem, domain: int, t: float,
            points: np.ndarray) -> np.ndarray:
    """f = du/dt - nu Lap(u) + (u . grad) u with the physical viscosity."""
    nu = problem.nu1 if domain == 0 else problem.nu2
    u = exact_velocity(problem, domain, t, points)
    g = exact_gradient(problem, domain, t, points)
    conv = np.einsum("nj,nij->ni", u, g)
    return time_derivative(problem, domain, t, points) - nu * laplacian(
        problem, domain, t, points) + conv


def velocity_fn(problem: ManufacturedProblem, domain: int):
    """Closure (t, points) -> (n, 2) for boundary and initial data."""
    return lambda t, pts: exact_velocity(problem, domain, t, pts)


def gradient_fn(problem: ManufacturedProblem, domain: int):
    return lambda t, pts: exact_gradient(problem, domain, t, pts)


def forcing_fn(problem: ManufacturedProblem, domain: int):
    return lambda t, pts: forcing(problem, domain, t, pts)


class ErrorAccumulator:
    """Observer accumulating discrete-in-time L2 and H1 errors.

    Levels j >= 1 contribute, matching the time-rectangle norm
    (dt * sum_j ||e(t_j)||^2)^(1/2); both domains are combined by
    root-sum-square.
    """

    def __init__(self, space, problem: ManufacturedProblem, refine: int = 1):
        self.space = space
        self.problem = problem
        self.refine = refine
        self.l2_sq = 0.0
        self.h1_sq = 0.0
        self.levels = 0

    def __call__(self, level: int, state):
        if level == 0:
            return
        from .spaces import error_norms
        for dom in (0, 1):
            l2, h1 = error_norms(
                self.space, dom, state.u[dom],
                velocity_fn(self.problem, dom),
                gradient_fn(self.problem, dom),
                t=state.t, refine=self.refine)
            self.l2_sq += l2 ** 2
            self.h1_sq += h1 ** 2
        self.levels += 1

    def result(self, dt: float) -> tuple[float, float]:
        return (float(np.sqrt(dt * self.l2_sq)),
                float(np.sqrt(dt * self.h1_sq)))


def accumulated_errors(states, problem: ManufacturedProblem, space,
                       dt: float, refine: int = 1):
    """Errors of a stored trajectory (list of states including level 0)."""
    acc = ErrorAccumulator(space, problem, refine=refine)
    for level, state in enumerate(states):
        acc(level, state)
    return acc.result(dt)
