"""Backward-Euler time stepping for the coupled two-fluid problem.

Five variants: ``ga`` decouples the domains with the lagged geometric-mean
interface term, ``ga-vms`` adds the projection-based small-scale dissipation,
``ga-vms-alt`` additionally rescales the interface terms of domain i by
(nu_i + nu_T) / nu_i, and ``twm`` / ``twm-vms`` solve both domains in one
monolithic system with the jump implicit.  Implicit convection is resolved
by Picard iteration; the interface weights stay frozen at their lagged
values within a step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import assembly
from .solver import ReusableSolver
from .spaces import Space

GA_FAMILY = ("ga", "ga-vms", "ga-vms-alt")
TWM_FAMILY = ("twm", "twm-vms")
SCHEMES = GA_FAMILY + TWM_FAMILY

BLOWUP_NORM = 1.0e3


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str
    nu1: float
    nu2: float
    kappa: float
    nu_t: float
    dt: float
    t_end: float
    picard_tol: float = 1.0e-10
    picard_max: int = 50
    convection_form: str = "skew"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.nu1 <= 0 or self.nu2 <= 0:
            raise ValueError("viscosities must be positive")
        if self.nu_t < 0 or self.kappa < 0:
            raise ValueError("nu_t and kappa must be nonnegative")
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.convection_form not in ("skew", "raw"):
            raise ValueError(f"unknown convection form {self.convection_form!r}")

    @property
    def vms(self) -> bool:
        return self.scheme in ("ga-vms", "ga-vms-alt", "twm-vms")

    @property
    def monolithic(self) -> bool:
        return self.scheme in TWM_FAMILY

    def viscosity(self, domain: int) -> float:
        return self.nu1 if domain == 0 else self.nu2

    def effective_viscosity(self, domain: int) -> float:
        return self.viscosity(domain) + (self.nu_t if self.vms else 0.0)


@dataclass
class State:
    """Discrete fields at one time level (plus the previous velocity)."""

    t: float
    u: tuple[np.ndarray, np.ndarray]
    p: tuple[np.ndarray, np.ndarray]
    u_prev: tuple[np.ndarray, np.ndarray] | None
    gh: tuple[np.ndarray, np.ndarray]
    picard: tuple[int, ...] = ()


class PicardDivergenceError(RuntimeError):
    """Nonlinear iteration failed; carries the residual trace as data."""

    def __init__(self, t: float, residuals: list[float], detail: str = ""):
        msg = (f"Picard iteration diverged at t={t:.6g} after "
               f"{len(residuals)} iterations" + (f" ({detail})" if detail else ""))
        super().__init__(msg)
        self.t = t
        self.residuals = residuals


def make_state(space: Space, t: float, u, p=None, u_prev=None,
               picard=()) -> State:
    """Package fields, recomputing the projected gradient for the new level."""
    if p is None:
        p = tuple(np.zeros(space.domains[d].n_p) for d in (0, 1))
    gh = tuple(assembly.project_gradient(space, d, u[d]) for d in (0, 1))
    return State(t=t, u=tuple(u), p=tuple(p), u_prev=u_prev, gh=gh,
                 picard=tuple(picard))


def velocity_norm(space: Space, domain: int, u: np.ndarray) -> float:
    mass = assembly.assemble_mass(space, domain)
    return float(np.sqrt(u @ (mass @ u)))


def combined_norm(space: Space, state: State) -> float:
    return float(np.sqrt(sum(velocity_norm(space, d, state.u[d]) ** 2
                             for d in (0, 1))))


# -- saddle-point scaffolding -------------------------------------------------

class _DomainBlocks:
    """Constant matrices of one domain's saddle-point system."""

    def __init__(self, space: Space, domain: int, config: SchemeConfig):
        ds = space.domains[domain]
        self.n_u, self.n_p = ds.n_u, ds.n_p
        self.mass = assembly.assemble_mass(space, domain)
        stiff = assembly.assemble_stiffness(
            space, domain, config.effective_viscosity(domain))
        self.a0 = (self.mass / config.dt + stiff).tocsr()
        self.b = assembly.assemble_divergence(space, domain)
        self.fixed_mask = np.concatenate([ds.u_fixed, ds.p_fixed])
        cache = assembly.p1_mass(space, domain)
        self.p_weight = cache @ np.ones(self.n_p)
        self.p_area = float(self.p_weight.sum())
        self.pin = ds.pressure_pin

    def normalize_pressure(self, p: np.ndarray) -> np.ndarray:
        if self.pin is None:
            return p
        return p - (p @ self.p_weight) / self.p_area


def _blocks(space: Space, config: SchemeConfig) -> tuple[_DomainBlocks, ...]:
    key = (config.dt, config.nu1, config.nu2,
           config.nu_t if config.vms else 0.0)
    store = getattr(space, "_scheme_blocks", None)
    if store is None:
        store = {}
        space._scheme_blocks = store
    if key not in store:
        store[key] = tuple(_DomainBlocks(space, d, config) for d in (0, 1))
    return store[key]


def _solver_ctx(space: Space, config: SchemeConfig, label) -> ReusableSolver:
    key = (config.dt, config.nu1, config.nu2,
           config.nu_t if config.vms else 0.0, config.monolithic, label)
    store = getattr(space, "_solver_pool", None)
    if store is None:
        store = {}
        space._solver_pool = store
    if key not in store:
        store[key] = ReusableSolver()
    ctx = store[key]
    ctx.tol = max(min(1e-12, 0.05 * config.picard_tol), 5e-15)
    return ctx


def _zeros(n: int) -> sp.csr_matrix:
    return sp.csr_matrix((n, n))


@dataclass
class _System:
    """One nonlinear solve: lagged saddle matrix plus convection updates."""

    s_step: sp.csr_matrix
    b: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    xfix: np.ndarray
    domains: tuple[int, ...]
    u_offsets: tuple[int, ...]
    u_sizes: tuple[int, ...]
    conv: object                      # callable(list of u) -> full-size csr

    def split_u(self, x: np.ndarray):
        return [x[o:o + n] for o, n in zip(self.u_offsets, self.u_sizes)]


def _picard(space: Space, config: SchemeConfig, sys: _System, w0,
            t_new: float, ctx: ReusableSolver):
    """Fixed-point iteration in the advecting field.

    Each pass solves the linearization at the previous iterate and measures
    the nonlinear residual at the new one; the interface weights inside
    ``sys.s_step`` stay frozen.
    """
    free, fixed = sys.free, sys.fixed
    xc = sys.xfix[fixed]
    s_rows = sys.s_step[free]
    s_ff = s_rows[:, free]
    b_f = sys.b[free]
    use_xc = bool(xc.any())
    if use_xc:
        b_f = b_f - s_rows[:, fixed] @ xc

    def reduced(ws):
        # only the convection block changes per pass; the frozen part is
        # sliced once per step
        c_rows = sys.conv(ws)[free]
        a = (s_ff + c_rows[:, free]).tocsr()
        rhs = b_f - c_rows[:, fixed] @ xc if use_xc else b_f
        return a, rhs

    a_mat, rhs = reduced(w0)
    residuals: list[float] = []
    x_full = np.array(sys.xfix)
    for it in range(1, config.picard_max + 1):
        sol = ctx.solve(a_mat.tocsc(), rhs)
        x_full[sys.free] = sol
        u_new = sys.split_u(x_full)
        a_mat, rhs = reduced(u_new)
        scale = max(float(np.linalg.norm(rhs)), 1e-300)
        rel = float(np.linalg.norm(a_mat @ sol - rhs)) / scale
        residuals.append(rel)
        if not np.isfinite(rel) or rel > 1e8:
            raise PicardDivergenceError(t_new, residuals, "residual blew up")
        if rel <= config.picard_tol:
            return x_full, it, residuals
        if (it >= 5 and rel > 10.0 * min(residuals)
                and rel > 100.0 * config.picard_tol):
            raise PicardDivergenceError(t_new, residuals, "residual growth")
    raise PicardDivergenceError(t_new, residuals, "iteration cap reached")


def _forcing_vector(space, domain, forcing, t):
    if forcing is None:
        return np.zeros(space.domains[domain].n_u)
    return assembly.assemble_load(space, domain, forcing[domain], t)


def _fixed_values(space, domain, dirichlet, t):
    ds = space.domains[domain]
    if dirichlet is None:
        return np.zeros(ds.n_u)
    return ds.dirichlet_values(dirichlet[domain], t)


# -- decoupled step -----------------------------------------------------------

def _step_decoupled(space, config, state, forcing, dirichlet,
                    domain_order=(0, 1)) -> State:
    if state.u_prev is None:
        raise ValueError("decoupled schemes need velocity levels n and n-1")
    blocks = _blocks(space, config)
    t_new = state.t + config.dt
    trace = assembly.sample_interface_trace(space, state.u, state.u_prev)
    iface = assembly.assemble_interface_blocks(
        space, trace, config.kappa, config.scheme,
        nu=(config.nu1, config.nu2), nu_t=config.nu_t)

    new_u = [None, None]
    new_p = [None, None]
    iters = [0, 0]
    for dom in domain_order:
        blk = blocks[dom]
        a_full = (blk.a0 + iface.implicit[dom]).tocsr()
        s_step = sp.bmat([[a_full, -blk.b.T], [blk.b, None]], format="csr")
        b_u = (blk.mass @ state.u[dom]) / config.dt + iface.rhs[dom]
        b_u += _forcing_vector(space, dom, forcing, t_new)
        if config.vms:
            b_u += assembly.assemble_vms_rhs(space, dom, state.gh[dom],
                                             config.nu_t)
        b = np.concatenate([b_u, np.zeros(blk.n_p)])
        xfix = np.concatenate([_fixed_values(space, dom, dirichlet, t_new),
                               np.zeros(blk.n_p)])
        n_p = blk.n_p

        def conv(ws, dom=dom, n_p=n_p):
            c = assembly.assemble_convection(space, dom, ws[0],
                                             config.convection_form)
            return sp.block_diag((c, _zeros(n_p)), format="csr")

        sys = _System(s_step=s_step, b=b,
                      free=np.flatnonzero(~blk.fixed_mask),
                      fixed=np.flatnonzero(blk.fixed_mask), xfix=xfix,
                      domains=(dom,), u_offsets=(0,), u_sizes=(blk.n_u,),
                      conv=conv)
        ctx = _solver_ctx(space, config, dom)
        x, it, _ = _picard(space, config, sys, [state.u[dom]], t_new, ctx)
        new_u[dom] = x[:blk.n_u]
        new_p[dom] = blk.normalize_pressure(x[blk.n_u:])
        iters[dom] = it
    return make_state(space, t_new, tuple(new_u), tuple(new_p),
                      u_prev=state.u, picard=tuple(iters))


def step_ga(space, config, state, forcing=None, dirichlet=None) -> State:
    if config.scheme != "ga":
        raise ValueError("config.scheme must be 'ga'")
    return _step_decoupled(space, config, state, forcing, dirichlet)


def step_ga_vms(space, config, state, forcing=None, dirichlet=None) -> State:
    if config.scheme not in ("ga-vms", "ga-vms-alt"):
        raise ValueError("config.scheme must be 'ga-vms' or 'ga-vms-alt'")
    return _step_decoupled(space, config, state, forcing, dirichlet)


# -- monolithic step ----------------------------------------------------------

def _step_monolithic(space, config, state, forcing, dirichlet) -> State:
    blocks = _blocks(space, config)
    t_new = state.t + config.dt
    trace = assembly.sample_interface_trace(space, state.u)
    iface = assembly.assemble_interface_blocks(space, trace, config.kappa,
                                               config.scheme)
    b1, b2 = blocks
    a1 = (b1.a0 + iface.own[0]).tocsr()
    a2 = (b2.a0 + iface.own[1]).tocsr()
    s_step = sp.bmat([
        [a1, -b1.b.T, -iface.cross[0], None],
        [b1.b, None, None, None],
        [-iface.cross[1], None, a2, -b2.b.T],
        [None, None, b2.b, None],
    ], format="csr")

    b_parts, xfix_parts = [], []
    for dom, blk in ((0, b1), (1, b2)):
        b_u = (blk.mass @ state.u[dom]) / config.dt
        b_u += _forcing_vector(space, dom, forcing, t_new)
        if config.vms:
            b_u += assembly.assemble_vms_rhs(space, dom, state.gh[dom],
                                             config.nu_t)
        b_parts.extend([b_u, np.zeros(blk.n_p)])
        xfix_parts.extend([_fixed_values(space, dom, dirichlet, t_new),
                           np.zeros(blk.n_p)])
    b = np.concatenate(b_parts)
    xfix = np.concatenate(xfix_parts)
    fixed_mask = np.concatenate([b1.fixed_mask, b2.fixed_mask])
    off2 = b1.n_u + b1.n_p

    def conv(ws):
        c1 = assembly.assemble_convection(space, 0, ws[0],
                                          config.convection_form)
        c2 = assembly.assemble_convection(space, 1, ws[1],
                                          config.convection_form)
        return sp.block_diag((c1, _zeros(b1.n_p), c2, _zeros(b2.n_p)),
                             format="csr")

    sys = _System(s_step=s_step, b=b, free=np.flatnonzero(~fixed_mask),
                  fixed=np.flatnonzero(fixed_mask), xfix=xfix, domains=(0, 1),
                  u_offsets=(0, off2), u_sizes=(b1.n_u, b2.n_u), conv=conv)
    ctx = _solver_ctx(space, config, "mono")
    x, it, _ = _picard(space, config, sys, [state.u[0], state.u[1]], t_new, ctx)
    u1, u2 = x[:b1.n_u], x[off2:off2 + b2.n_u]
    p1 = b1.normalize_pressure(x[b1.n_u:off2])
    p2 = b2.normalize_pressure(x[off2 + b2.n_u:])
    return make_state(space, t_new, (u1, u2), (p1, p2), u_prev=state.u,
                      picard=(it,))


def step_twm(space, config, state, forcing=None, dirichlet=None) -> State:
    if config.scheme != "twm":
        raise ValueError("config.scheme must be 'twm'")
    return _step_monolithic(space, config, state, forcing, dirichlet)


def step_twm_vms(space, config, state, forcing=None, dirichlet=None) -> State:
    if config.scheme != "twm-vms":
        raise ValueError("config.scheme must be 'twm-vms'")
    return _step_monolithic(space, config, state, forcing, dirichlet)


def step(space, config, state, forcing=None, dirichlet=None) -> State:
    if config.monolithic:
        return _step_monolithic(space, config, state, forcing, dirichlet)
    return _step_decoupled(space, config, state, forcing, dirichlet)


# -- bootstrap ----------------------------------------------------------------

def imex_bootstrap(space, config, state0: State, forcing=None,
                   dirichlet=None) -> State:
    """One implicit-explicit step producing the second initial level.

    The own-side interface term kappa |[u^0]| u^1 . v is implicit, the cross
    term kappa |[u^0]| u_j^0 . v fully explicit, and convection is linearized
    about u^0 (a single pass).  Runs with the physical viscosity only.
    """
    blocks = _blocks(space, replace(config, scheme="ga"))
    t_new = state0.t + config.dt
    trace = assembly.sample_interface_trace(space, state0.u)
    iface = assembly.assemble_interface_blocks(space, trace, config.kappa,
                                               "imex")
    new_u, new_p, iters = [None, None], [None, None], [0, 0]
    for dom in (0, 1):
        blk = blocks[dom]
        a_full = (blk.a0 + iface.implicit[dom]
                  + assembly.assemble_convection(space, dom, state0.u[dom],
                                                 config.convection_form))
        s_full = sp.bmat([[a_full.tocsr(), -blk.b.T], [blk.b, None]],
                         format="csr")
        b_u = (blk.mass @ state0.u[dom]) / config.dt + iface.rhs[dom]
        b_u += _forcing_vector(space, dom, forcing, t_new)
        b = np.concatenate([b_u, np.zeros(blk.n_p)])
        xfix = np.concatenate([_fixed_values(space, dom, dirichlet, t_new),
                               np.zeros(blk.n_p)])
        free = np.flatnonzero(~blk.fixed_mask)
        fixed = np.flatnonzero(blk.fixed_mask)
        rows = s_full[free]
        a_red = rows[:, free]
        rhs = b[free] - rows[:, fixed] @ xfix[fixed]
        x = np.array(xfix)
        ctx = _solver_ctx(space, replace(config, scheme="ga"), dom)
        x[free] = ctx.solve(a_red.tocsc(), rhs)
        new_u[dom] = x[:blk.n_u]
        new_p[dom] = blk.normalize_pressure(x[blk.n_u:])
        iters[dom] = 1
    return make_state(space, t_new, tuple(new_u), tuple(new_p),
                      u_prev=state0.u, picard=tuple(iters))


# -- time loop ----------------------------------------------------------------

@dataclass
class InitialData:
    """Level-0 velocity, optionally with a prescribed second level."""

    u0: tuple[np.ndarray, np.ndarray]
    u1: tuple[np.ndarray, np.ndarray] | None = None


@dataclass
class RunResult:
    status: str                      # "ok" or "diverged"
    final_state: State
    levels_completed: int
    num_levels: int
    blowup_time: float | None = None
    divergence: PicardDivergenceError | None = None
    wall_time: float = 0.0


def run(space, config, forcing=None, dirichlet=None, initial=None,
        observers=()) -> RunResult:
    """Advance from t = 0 to t_end, notifying observers at every level.

    Two-lag schemes consume ``initial.u1`` when given and otherwise bootstrap
    it with one IMEX step; monolithic schemes start directly from u0.
    Nonlinear divergence and norm blow-up are recorded outcomes, not errors.
    """
    levels = round(config.t_end / config.dt)
    if abs(config.t_end - levels * config.dt) > 1e-9 * max(1.0, config.t_end):
        raise ValueError("t_end must be an integer multiple of dt")

    def notify(level, st):
        for obs in observers:
            obs(level, st)

    t_start = time.perf_counter()
    state = make_state(space, 0.0, initial.u0)
    notify(0, state)
    level = 0
    result = lambda status, blow=None, err=None: RunResult(  # noqa: E731
        status=status, final_state=state, levels_completed=level,
        num_levels=levels, blowup_time=blow, divergence=err,
        wall_time=time.perf_counter() - t_start)

    if config.scheme in GA_FAMILY and levels >= 1:
        try:
            if initial.u1 is not None:
                state = make_state(space, config.dt, initial.u1,
                                   u_prev=initial.u0)
            else:
                state = imex_bootstrap(space, config, state, forcing,
                                       dirichlet)
        except PicardDivergenceError as err:
            return result("diverged", blow=config.dt, err=err)
        level = 1
        notify(level, state)

    while level < levels:
        try:
            state = step(space, config, state, forcing, dirichlet)
        except PicardDivergenceError as err:
            return result("diverged", blow=err.t, err=err)
        except Exception as err:
            raise RuntimeError(
                f"step from t={state.t:.6g} to level {level + 1} failed: "
                f"{err}") from err
        level += 1
        notify(level, state)
        if combined_norm(space, state) > BLOWUP_NORM:
            return result("diverged", blow=state.t)
    return result("ok")
