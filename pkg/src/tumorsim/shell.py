"""Configuration parsing, run orchestration, and the command line.

Config files are plain text with "[section]" headers and "key = value"
lines; '#' starts a comment.  Unknown sections or keys are parse errors
with a line number.  Sections and defaults:

    [grid]    nx = 64, ny = 64, lx = 1.0, ly = 1.0
    [time]    t_final = 0.1, dt = 0.0005, snapshot_every = 0
    [params]  every ModelParams key (lambda1..cfl), model defaults
    [initial] phi = spinodal:0.5,0.01,1234   p = uniform:0.0
    [run]     mode = full | decoupled | limit, output_dir = <path>,
              outer_iterate = false
    [limit]   eps_list = 0.2,0.1,0.05

Initial conditions take one of three forms: "uniform:<value>",
"spinodal:<mean>,<amp>,<seed>", or "file:<snapshot path>".  Spinodal data
perturbs the mean cell by cell with a fixed 64-bit linear congruential
generator (below), so identical configs reproduce bit-identical runs.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields as dc_fields

import numpy as np

from . import limit as limit_mod
from . import physics, simulate
from .elliptic import EllipticProblem, solve
from .fields import (
    BoundaryCondition,
    GridSpec,
    ScalarField,
    cell_inner,
    read_snapshot,
)

# Knuth's MMIX multiplier/increment; state advances modulo 2**64 and each
# draw maps the top 53 bits to [0, 1).
LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
_MASK64 = (1 << 64) - 1


class ParseError(ValueError):
    """Malformed config text; message carries the line number."""


class ValidationError(ValueError):
    """Config parsed but violates a model assumption; message cites the tag."""


def lcg_uniforms(seed: int, count: int) -> np.ndarray:
    """Deterministic uniforms in [0, 1) from the documented 64-bit LCG."""
    x = seed & _MASK64
    out = np.empty(count)
    for i in range(count):
        x = (LCG_MULTIPLIER * x + LCG_INCREMENT) & _MASK64
        out[i] = (x >> 11) / float(1 << 53)
    return out


@dataclass(frozen=True)
class InitialCondition:
    kind: str  # "uniform" | "spinodal" | "file"
    value: float = 0.0
    mean: float = 0.0
    amp: float = 0.0
    seed: int = 0
    path: str = ""

    @classmethod
    def parse(cls, text: str) -> "InitialCondition":
        kind, _, rest = text.partition(":")
        kind = kind.strip()
        try:
            if kind == "uniform":
                return cls("uniform", value=float(rest))
            if kind == "spinodal":
                mean, amp, seed = (s.strip() for s in rest.split(","))
                return cls("spinodal", mean=float(mean), amp=float(amp), seed=int(seed))
            if kind == "file":
                if not rest.strip():
                    raise ValueError("empty path")
                return cls("file", path=rest.strip())
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(f"bad initial condition {text!r}: {exc}") from exc
        raise ParseError(f"unknown initial condition kind {kind!r}")

    def serialize(self) -> str:
        if self.kind == "uniform":
            return f"uniform:{self.value!r}"
        if self.kind == "spinodal":
            return f"spinodal:{self.mean!r},{self.amp!r},{self.seed}"
        return f"file:{self.path}"

    def build(self, grid: GridSpec) -> ScalarField:
        if self.kind == "uniform":
            return ScalarField.full(grid, self.value)
        if self.kind == "spinodal":
            u = lcg_uniforms(self.seed, grid.nx * grid.ny)
            return ScalarField(grid, self.mean + self.amp * (2.0 * u - 1.0))
        field, _ = read_snapshot(self.path, grid)
        return field


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = GridSpec(64, 64, 1.0, 1.0)
    t_final: float = 0.1
    dt: float = 5e-4
    snapshot_every: int = 0
    params: physics.ModelParams = physics.ModelParams()
    phi0: InitialCondition = InitialCondition("spinodal", mean=0.5, amp=0.01, seed=1234)
    p0: InitialCondition = InitialCondition("uniform", value=0.0)
    mode: str = "full"
    output_dir: str | None = None
    outer_iterate: bool = False
    eps_list: tuple = (0.2, 0.1, 0.05)


_PARAM_KEYS = {f.name for f in dc_fields(physics.ModelParams)}
_GRID_KEYS = {"nx", "ny", "lx", "ly"}
_TIME_KEYS = {"t_final", "dt", "snapshot_every"}
_INITIAL_KEYS = {"phi", "p"}
_RUN_KEYS = {"mode", "output_dir", "outer_iterate"}
_LIMIT_KEYS = {"eps_list"}
_SECTIONS = {
    "grid": _GRID_KEYS,
    "time": _TIME_KEYS,
    "params": _PARAM_KEYS,
    "initial": _INITIAL_KEYS,
    "run": _RUN_KEYS,
    "limit": _LIMIT_KEYS,
}


def _parse_bool(text: str, lineno: int) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ParseError(f"line {lineno}: expected a boolean, got {text!r}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; raises ParseError / ValidationError."""
    section = None
    raw: dict[str, dict[str, tuple[str, int]]] = {name: {} for name in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            section = body[1:-1].strip()
            if section not in _SECTIONS:
                raise ParseError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in body:
            raise ParseError(f"line {lineno}: expected 'key = value'")
        if section is None:
            raise ParseError(f"line {lineno}: key outside any section")
        key, _, value = body.partition("=")
        key = key.strip()
        if key not in _SECTIONS[section]:
            raise ParseError(f"line {lineno}: unknown key {key!r} in [{section}]")
        raw[section][key] = (value.strip(), lineno)

    def pull(section, key, convert, default):
        if key not in raw[section]:
            return default
        value, lineno = raw[section][key]
        try:
            return convert(value)
        except ParseError:
            raise
        except (TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: bad value for {key}: {exc}") from exc

    try:
        grid = GridSpec(
            nx=pull("grid", "nx", int, 64),
            ny=pull("grid", "ny", int, 64),
            lx=pull("grid", "lx", float, 1.0),
            ly=pull("grid", "ly", float, 1.0),
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    params_kwargs = {}
    for key in sorted(_PARAM_KEYS):
        if key in raw["params"]:
            params_kwargs[key] = pull("params", key, float, None)
    params = physics.ModelParams(**params_kwargs)

    mode = pull("run", "mode", str, "full")
    if mode not in ("full", "decoupled", "limit"):
        lineno = raw["run"]["mode"][1]
        raise ParseError(f"line {lineno}: mode must be full, decoupled or limit")

    eps_default = RunConfig.eps_list
    cfg = RunConfig(
        grid=grid,
        t_final=pull("time", "t_final", float, 0.1),
        dt=pull("time", "dt", float, 5e-4),
        snapshot_every=pull("time", "snapshot_every", int, 0),
        params=params,
        phi0=pull("initial", "phi", InitialCondition.parse,
                  InitialCondition("spinodal", mean=0.5, amp=0.01, seed=1234)),
        p0=pull("initial", "p", InitialCondition.parse,
                InitialCondition("uniform", value=0.0)),
        mode=mode,
        output_dir=pull("run", "output_dir", str, None),
        outer_iterate=pull("run", "outer_iterate",
                           lambda v: _parse_bool(v, raw["run"]["outer_iterate"][1]),
                           False),
        eps_list=pull("limit", "eps_list",
                      lambda v: tuple(float(s) for s in v.split(",")), eps_default),
    )

    if not cfg.dt > 0:
        raise ValidationError(f"dt must be positive (dt = {cfg.dt})")
    if cfg.t_final < 0:
        raise ValidationError(f"t_final must be >= 0 (t_final = {cfg.t_final})")
    for ic in (cfg.phi0, cfg.p0):
        if ic.kind == "file" and not os.path.exists(ic.path):
            raise ValidationError(f"initial-condition file not found: {ic.path}")
    errors = physics.validate(params, cfg.phi0.build(grid), cfg.p0.build(grid))
    if errors:
        raise ValidationError("; ".join(errors))
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Emit config text that parses back to an equal RunConfig."""
    lines = [
        "[grid]",
        f"nx = {cfg.grid.nx}", f"ny = {cfg.grid.ny}",
        f"lx = {cfg.grid.lx!r}", f"ly = {cfg.grid.ly!r}",
        "", "[time]",
        f"t_final = {cfg.t_final!r}", f"dt = {cfg.dt!r}",
        f"snapshot_every = {cfg.snapshot_every}",
        "", "[params]",
    ]
    for f in dc_fields(physics.ModelParams):
        lines.append(f"{f.name} = {getattr(cfg.params, f.name)!r}")
    lines += [
        "", "[initial]",
        f"phi = {cfg.phi0.serialize()}",
        f"p = {cfg.p0.serialize()}",
        "", "[run]",
        f"mode = {cfg.mode}",
        f"outer_iterate = {'true' if cfg.outer_iterate else 'false'}",
    ]
    if cfg.output_dir:
        lines.append(f"output_dir = {cfg.output_dir}")
    lines += ["", "[limit]",
              "eps_list = " + ",".join(repr(e) for e in cfg.eps_list)]
    return "\n".join(lines) + "\n"


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def run_mms(grid_sizes=(16, 32, 64)) -> dict[str, list[float]]:
    """Convergence orders for the Poisson and Helmholtz solves via
    manufactured solutions; returns observed orders per refinement step."""
    import math

    def one(problem_kind, n):
        grid = GridSpec(n, n, 1.0, 1.0)
        exact = ScalarField.from_function(
            grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        if problem_kind == "poisson":
            coeff0 = ScalarField.full(grid, 0.0)
            rhs = ScalarField(grid, 2.0 * np.pi**2 * exact.data)
        else:
            X, Y = grid.cell_centers()
            c = 1.0 + X**2 * Y**2
            coeff0 = ScalarField(grid, c)
            rhs = ScalarField(grid, (2.0 * np.pi**2 + c) * exact.data)
        sol, _ = solve(EllipticProblem(coeff0, rhs, BoundaryCondition.DIRICHLET_ZERO),
                       tol=1e-12)
        err = ScalarField(grid, sol.data - exact.data)
        return math.sqrt(cell_inner(err, err))

    orders = {}
    for kind in ("poisson", "helmholtz"):
        errs = [one(kind, n) for n in grid_sizes]
        orders[kind] = [float(np.log2(a / b)) for a, b in zip(errs, errs[1:])]
    return orders


def _cmd_check(path: str) -> int:
    cfg = load_config(path)
    print(f"ok: {cfg.mode} run, grid {cfg.grid.nx}x{cfg.grid.ny}, "
          f"{int(round(cfg.t_final / cfg.dt))} steps")
    return 0


def _cmd_run(path: str) -> int:
    cfg = load_config(path)
    if cfg.mode == "limit":
        return _cmd_limit(path)
    state, records = simulate.run(cfg)
    last = records[-1] if records else None
    if last is None:
        print("no steps taken (t_final = 0)")
    else:
        print(f"finished at t = {state.t!r}: energy = {last.energy!r}, "
              f"phi in [{last.phi_min!r}, {last.phi_max!r}], "
              f"div defect {last.div_residual!r}")
    return 0


def _cmd_limit(path: str) -> int:
    cfg = load_config(path)
    report = limit_mod.run_limit_study(cfg.eps_list, cfg)
    print(report.table())
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        report.write_csv(os.path.join(cfg.output_dir, "limit_table.csv"))
    return 0


def _cmd_mms() -> int:
    orders = run_mms()
    ok = True
    print(f"{'solve':>10} {'orders':>24}")
    for kind, obs in orders.items():
        print(f"{kind:>10} " + " ".join(f"{o:>11.3f}" for o in obs))
        ok = ok and all(1.8 <= o <= 2.2 for o in obs)
    print("orders within [1.8, 2.2]" if ok else "orders OUT OF RANGE")
    return 0 if ok else 1


def cli(argv) -> int:
    parser = argparse.ArgumentParser(
        prog="tumorsim",
        description="structured-grid simulator for the diffuse-interface tumor model")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (("run", True), ("check", True),
                               ("limit", True), ("mms", False)):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("config", help="path to a config file")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        if args.command == "check":
            return _cmd_check(args.config)
        if args.command == "run":
            return _cmd_run(args.config)
        if args.command == "limit":
            return _cmd_limit(args.config)
        return _cmd_mms()
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # solver failures: one-line cause, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
