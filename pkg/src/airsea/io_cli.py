"""Experiment drivers, flat-file configuration, CSV emission and VTU dumps.

Config files are UTF-8 ``key=value`` lines with section dots; unknown keys
are rejected so typos cannot silently change an experiment.  The CSV schemas
are fixed:

    convergence.csv  N,h,dt,err_l2l2,rate_l2,err_l2h1,rate_h1,status
    energy.csv       t,ke_atm,ke_ocean,diss_atm,diss_ocean,aed,total_atm,total_ocean
    step.csv         t,norm_atm,norm_ocean,blowup_flag
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics, manufactured as mfg, meshing, schemes
from .meshing import CoupledMesh, DomainMesh
from .schemes import InitialData, SchemeConfig
from .spaces import Space, build_space

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


class ConfigError(ValueError):
    pass


KNOWN_KEYS = {
    "scheme", "nu1", "nu2", "kappa", "nu_t", "dt", "t_end", "a", "b",
    "mesh.kind", "mesh.n", "mesh.h", "experiment", "refinement",
    "picard.tol", "picard.max", "convection.form", "output.dir",
    "snapshot.every", "error.refine",
}

_DEFAULTS = {
    "convergence": {
        "kappa": "0.001", "b": "0.5", "t_end": "1.0", "dt": "1/N",
        "nu_t": "h", "mesh.kind": "two-square", "picard.tol": "1e-10",
        "picard.max": "50", "convection.form": "skew", "output.dir": "out",
        "snapshot.every": "0", "error.refine": "1",
    },
    "energy": {
        "nu1": "1.5e-3", "nu2": "1.0e-4", "kappa": "1.0e-3", "dt": "0.01",
        "t_end": "10.0", "nu_t": "h", "mesh.kind": "two-square",
        "mesh.n": "32", "picard.tol": "1e-10", "picard.max": "50",
        "convection.form": "skew", "output.dir": "out", "snapshot.every": "0",
    },
    "step": {
        "nu1": "5e-4", "nu2": "5e-3", "kappa": "2.45e-3", "dt": "0.01",
        "t_end": "40.0", "nu_t": "0.01", "mesh.kind": "step",
        "mesh.h": "0.125", "picard.tol": "1e-8", "picard.max": "50",
        "convection.form": "skew", "output.dir": "out",
        "snapshot.every": "0",
    },
}


class RunConfig:
    """Flat experiment configuration with experiment-specific defaults."""

    def __init__(self, values: dict[str, str]):
        unknown = set(values) - KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in values:
            raise ConfigError("config must set 'experiment'")
        experiment = values["experiment"]
        if experiment not in _DEFAULTS:
            raise ConfigError(f"unknown experiment {experiment!r}")
        self.values = dict(_DEFAULTS[experiment])
        self.values.update(values)
        self.experiment = experiment

    @classmethod
    def load(cls, path) -> "RunConfig":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = val
        return cls(values)

    def get(self, key: str, default=None) -> str | None:
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"config key {key!r} is required for "
                              f"experiment {self.experiment!r}")
        return self.values[key]

    def number(self, key: str, default=None) -> float:
        raw = self.require(key) if default is None else self.get(key, default)
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} must be a number, "
                              f"got {raw!r}") from None

    def integer(self, key: str, default=None) -> int:
        val = self.number(key, default)
        if val != int(val):
            raise ConfigError(f"config key {key!r} must be an integer")
        return int(val)

    def resolve_nu_t(self, mesh: CoupledMesh) -> float:
        raw = self.require("nu_t")
        if raw == "h":
            return mesh.spacing
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"nu_t must be a number or 'h', got {raw!r}") \
                from None

    def resolve_dt(self, n: int | None = None) -> float:
        raw = self.require("dt")
        if raw == "1/N":
            if n is None:
                raise ConfigError("dt sentinel '1/N' needs a refinement level")
            return 1.0 / n
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"dt must be a number or '1/N', got {raw!r}") \
                from None

    def refinement_levels(self) -> list[int]:
        raw = self.require("refinement")
        try:
            levels = [int(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"refinement must be a comma list of N values, "
                              f"got {raw!r}") from None
        if not levels:
            raise ConfigError("refinement list is empty")
        return levels

    def scheme_config(self, mesh: CoupledMesh, scheme: str,
                      n: int | None = None, dt: float | None = None,
                      t_end: float | None = None) -> SchemeConfig:
        return SchemeConfig(
            scheme=scheme,
            nu1=self.number("nu1"), nu2=self.number("nu2"),
            kappa=self.number("kappa"),
            nu_t=self.resolve_nu_t(mesh),
            dt=self.resolve_dt(n) if dt is None else dt,
            t_end=self.number("t_end") if t_end is None else t_end,
            picard_tol=self.number("picard.tol"),
            picard_max=self.integer("picard.max"),
            convection_form=self.get("convection.form", "skew"),
        )


# -- experiment drivers --------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _manufactured_setup(config: RunConfig):
    return mfg.ManufacturedProblem(
        a=config.number("a"), kappa=config.number("kappa"),
        nu1=config.number("nu1"), nu2=config.number("nu2"),
        b=config.number("b"))


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6e}"


def cmd_convergence(config: RunConfig, out_dir, scheme=None):
    """Refinement sweep on the closed-form problem; writes convergence.csv.

    Each row builds its own mesh (dt = 1/N when configured), runs the scheme
    and accumulates the discrete space-time errors.  A diverging row is
    recorded with status=diverged instead of aborting the sweep.
    """
    out = Path(out_dir)
    scheme = scheme or config.require("scheme")
    problem = _manufactured_setup(config)
    refine = config.integer("error.refine", "1")
    entries = []
    for n in config.refinement_levels():
        mesh = meshing.generate_two_domain_mesh(n)
        space = build_space(mesh)
        cfg = config.scheme_config(mesh, scheme, n=n)
        forcing = tuple(mfg.forcing_fn(problem, d) for d in (0, 1))
        dirichlet = tuple(mfg.velocity_fn(problem, d) for d in (0, 1))

        def interp(dom, t):
            return space.domains[dom].interpolate_velocity(
                lambda pts: mfg.exact_velocity(problem, dom, t, pts))

        initial = InitialData(u0=(interp(0, 0.0), interp(1, 0.0)),
                              u1=(interp(0, cfg.dt), interp(1, cfg.dt)))
        acc = mfg.ErrorAccumulator(space, problem, refine=refine)
        result = schemes.run(space, cfg, forcing, dirichlet, initial,
                             observers=[acc])
        if result.status == "ok":
            l2, h1 = acc.result(cfg.dt)
            entries.append((n, mesh.h[0], cfg.dt, l2, h1, "ok"))
        else:
            entries.append((n, mesh.h[0], cfg.dt, None, None, "diverged"))
    table = diagnostics.convergence_rates(entries)
    rows = [(r.n, f"{r.h:.6e}", f"{r.dt:.6e}", _fmt(r.err_l2l2),
             "" if r.rate_l2 is None else f"{r.rate_l2:.2f}",
             _fmt(r.err_l2h1),
             "" if r.rate_h1 is None else f"{r.rate_h1:.2f}", r.status)
            for r in table.rows]
    _write_csv(out / "convergence.csv",
               ["N", "h", "dt", "err_l2l2", "rate_l2", "err_l2h1", "rate_h1",
                "status"], rows)
    print(f"scheme {scheme}")
    print(table.format())
    return table


def rotating_initial_velocity(points: np.ndarray) -> np.ndarray:
    """Divergence-free counter-rotating field used by the energy experiment."""
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([np.sin(2 * np.pi * y) * np.sin(np.pi * x) ** 2,
                     -np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2], axis=1)


def _energy_csv_rows(report: diagnostics.EnergyReport):
    for k in range(len(report.t)):
        yield (f"{report.t[k]:.6f}", _fmt(report.ke[k, 0]),
               _fmt(report.ke[k, 1]), _fmt(report.diss[k, 0]),
               _fmt(report.diss[k, 1]), _fmt(report.aed[k]),
               _fmt(report.totals[k, 0]), _fmt(report.totals[k, 1]))


def cmd_energy(config: RunConfig, out_dir, scheme=None):
    """Zero-forcing energy experiment comparing the decoupled schemes.

    Runs from the counter-rotating initial field with homogeneous Dirichlet
    data away from the interface; writes one energy CSV per scheme plus a
    summary with final AEDs, per-domain totals and wall clocks.
    """
    out = Path(out_dir)
    run_schemes = [scheme] if scheme else ["ga", "ga-vms"]
    mesh = meshing.generate_two_domain_mesh(config.integer("mesh.n"))
    space = build_space(mesh)
    u0 = tuple(space.domains[d].interpolate_velocity(rotating_initial_velocity)
               for d in (0, 1))
    summary = []
    reports = {}
    for name in run_schemes:
        cfg = config.scheme_config(mesh, name)
        obs = diagnostics.EnergyObserver(space, cfg)
        t0 = time.perf_counter()
        result = schemes.run(space, cfg, forcing=None, dirichlet=None,
                             initial=InitialData(u0=u0), observers=[obs])
        wall = time.perf_counter() - t0
        report = obs.report()
        reports[name] = report
        _write_csv(out / f"energy_{name}.csv",
                   ["t", "ke_atm", "ke_ocean", "diss_atm", "diss_ocean",
                    "aed", "total_atm", "total_ocean"],
                   _energy_csv_rows(report))
        summary.append((name, _fmt(report.aed[-1]),
                        _fmt(report.totals[-1, 0]), _fmt(report.totals[-1, 1]),
                        _fmt(report.ke[0, 0]), _fmt(report.ke[0, 1]),
                        f"{wall:.3f}", result.status))
        print(f"{name}: final AED {report.aed[-1]:.6e}, "
              f"totals (atm, ocean) = ({report.totals[-1, 0]:.6e}, "
              f"{report.totals[-1, 1]:.6e}), wall {wall:.1f}s, "
              f"{result.status}")
    _write_csv(out / "energy_summary.csv",
               ["scheme", "final_aed", "total_atm", "total_ocean",
                "initial_atm", "initial_ocean", "wall_clock_s", "status"],
               summary)
    return reports, summary


def step_inflow_profile(t: float, points: np.ndarray) -> np.ndarray:
    """Parabolic inflow with unit maximum on the inlet face x = 0."""
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    out = np.zeros((len(x), 2))
    inlet = np.abs(x) < 1e-12
    out[inlet, 0] = 4.0 * (y[inlet] - meshing.STEP_SHELF_Y) * (
        meshing.STEP_TOP_Y - y[inlet])
    return out


def _zero_data(t, points):
    return np.zeros((len(np.atleast_2d(points)), 2))


class SnapshotWriter:
    """Observer dumping VTU snapshots every ``every`` levels."""

    def __init__(self, space: Space, out_dir, tag: str, every: int):
        self.space = space
        self.out = Path(out_dir)
        self.tag = tag
        self.every = every

    def __call__(self, level: int, state):
        if self.every <= 0 or level == 0 or level % self.every:
            return
        for dom, name in ((0, "atm"), (1, "ocean")):
            ds = self.space.domains[dom]
            velocity = ds.velocity_at_nodes(state.u[dom])[:ds.mesh.num_vertices]
            path = self.out / f"{self.tag}_{name}_{level:06d}.vtu"
            write_vtu(ds.mesh, {"velocity": velocity,
                                "pressure": state.p[dom]}, path)


def cmd_step(config: RunConfig, out_dir, scheme=None):
    """Channel-over-ocean stability experiment; writes norm traces per scheme.

    The flow starts from rest, is driven by the parabolic inlet profile and
    runs to t_end or until blow-up; blow-up is recorded, not raised.
    """
    out = Path(out_dir)
    run_schemes = [scheme] if scheme else ["ga", "ga-vms"]
    mesh = meshing.generate_step_mesh(config.number("mesh.h"))
    space = build_space(mesh)
    dirichlet = (step_inflow_profile, _zero_data)
    u0 = tuple(np.zeros(space.domains[d].n_u) for d in (0, 1))
    every = config.integer("snapshot.every")
    outcome = {}
    for name in run_schemes:
        cfg = config.scheme_config(mesh, name)
        recorder = _NormTraceObserver(space)
        observers = [recorder]
        if every > 0:
            observers.append(SnapshotWriter(space, out / "snapshots", name,
                                            every))
        t0 = time.perf_counter()
        result = schemes.run(space, cfg, forcing=None, dirichlet=dirichlet,
                             initial=InitialData(u0=u0), observers=observers)
        wall = time.perf_counter() - t0
        blown = result.status == "diverged"
        rows = [(f"{t:.6f}", _fmt(n1), _fmt(n2), 0)
                for t, n1, n2 in recorder.rows]
        if blown:
            last = rows[-1]
            rows[-1] = (last[0], last[1], last[2], 1)
        _write_csv(out / f"step_{name}.csv",
                   ["t", "norm_atm", "norm_ocean", "blowup_flag"], rows)
        outcome[name] = {"status": result.status,
                         "blowup_time": result.blowup_time,
                         "wall_clock_s": wall}
        print(f"{name}: {result.status}"
              + (f" (blow-up at t={result.blowup_time:.2f})" if blown else "")
              + f", wall {wall:.1f}s")
    return outcome


class _NormTraceObserver:
    def __init__(self, space: Space):
        self.space = space
        self.rows: list[tuple[float, float, float]] = []

    def __call__(self, level, state):
        self.rows.append((state.t,
                          schemes.velocity_norm(self.space, 0, state.u[0]),
                          schemes.velocity_norm(self.space, 1, state.u[1])))


# -- VTU ------------------------------------------------------------------------

def write_vtu(mesh: DomainMesh, fields: dict[str, np.ndarray], path) -> None:
    """ASCII XML unstructured-grid file with vertex data.

    ``fields['velocity']`` is (nv, 2) and written with a zero z component;
    ``fields['pressure']`` is (nv,).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nv = mesh.num_vertices
    nt = mesh.num_triangles
    velocity = np.asarray(fields["velocity"], dtype=float)
    pressure = np.asarray(fields["pressure"], dtype=float)
    if velocity.shape != (nv, 2) or pressure.shape != (nv,):
        raise ValueError("fields must be sampled at mesh vertices")

    def arr(values):
        return "\n".join(" ".join(f"{v:.16g}" for v in row) for row in values)

    points3 = np.column_stack([mesh.vertices, np.zeros(nv)])
    vel3 = np.column_stack([velocity, np.zeros(nv)])
    offsets = 3 * np.arange(1, nt + 1)
    lines = [
        '<?xml version="1.0"?>',
        '<VTKFile type="UnstructuredGrid" version="0.1" '
        'byte_order="LittleEndian">',
        "  <UnstructuredGrid>",
        f'    <Piece NumberOfPoints="{nv}" NumberOfCells="{nt}">',
        "      <Points>",
        '        <DataArray type="Float64" NumberOfComponents="3" '
        'format="ascii">',
        arr(points3),
        "        </DataArray>",
        "      </Points>",
        "      <Cells>",
        '        <DataArray type="Int64" Name="connectivity" format="ascii">',
        arr(mesh.triangles),
        "        </DataArray>",
        '        <DataArray type="Int64" Name="offsets" format="ascii">',
        " ".join(str(o) for o in offsets),
        "        </DataArray>",
        '        <DataArray type="UInt8" Name="types" format="ascii">',
        " ".join("5" for _ in range(nt)),
        "        </DataArray>",
        "      </Cells>",
        '      <PointData Vectors="velocity">',
        '        <DataArray type="Float64" Name="velocity" '
        'NumberOfComponents="3" format="ascii">',
        arr(vel3),
        "        </DataArray>",
        '        <DataArray type="Float64" Name="pressure" format="ascii">',
        " ".join(f"{v:.16g}" for v in pressure),
        "        </DataArray>",
        "      </PointData>",
        "    </Piece>",
        "  </UnstructuredGrid>",
        "</VTKFile>",
    ]
    path.write_text("\n".join(lines) + "\n")


# -- CLI --------------------------------------------------------------------------

_COMMANDS = {"convergence": cmd_convergence, "energy": cmd_energy,
             "step": cmd_step}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="airsea",
        description="Coupled two-fluid finite element experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--scheme", default=None, help="scheme override")
    args = parser.parse_args(argv)
    try:
        config = RunConfig.load(args.config)
        if config.experiment != args.command:
            raise ConfigError(
                f"config is for experiment {config.experiment!r}, "
                f"but {args.command!r} was requested")
        out_dir = args.out or config.get("output.dir", "out")
    except (ConfigError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _COMMANDS[args.command](config, out_dir, scheme=args.scheme)
    except (ConfigError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # solver failures outside recorded divergence
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
