"""Command-line scenario runner.

Every subcommand writes one data file (CSV or JSON) whose header echoes the
full configuration, the tool version, truncation deficits and solver
statistics. Settings come from defaults, then an optional INI-style config
file (section ``[run]``), then command-line flags.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, attack, evm, fock, sources, verify
from .numerics import ContractError

log = logging.getLogger("chanprobe")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
FAIL_FRACTION = 0.10


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "scan-squeezed"
    scenario: str = "squeezed"
    theta: float = np.pi / 3
    phi: float = 0.0
    r: float = 0.5
    nbar: float = 0.0
    alpha: float = 0.5
    n_max: int = 16
    max_deficit: float = 2e-3
    m: int = 0
    grid: str = "0.3:2.0:40"
    grid2: str = "0.5:1.5:20"
    mode: str = "optimal"
    vx: float = 1.0
    vp: float = 0.5
    aout: float = 0.3
    v: float = 0.6
    p: float = 0.0
    tol: float = verify.SOLVER_TOL
    width: float = 1e-4
    seed: int = 12345
    output: str = ""
    format: str = "csv"
    emit_plot: bool = False

    def validate(self) -> "RunConfig":
        if self.scenario not in ("qubit", "squeezed", "displaced"):
            raise ConfigError(f"scenario: unknown value {self.scenario!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format: must be csv or json, got {self.format!r}")
        if self.mode not in ("naive", "optimal", "optimal+C"):
            raise ConfigError(f"mode: unknown purification mode {self.mode!r}")
        if self.n_max < 1:
            raise ConfigError("n_max: must be >= 1")
        if self.nbar < 0:
            raise ConfigError("nbar: must be >= 0")
        if self.m < 0:
            raise ConfigError("m: must be >= 0")
        if not 0 <= self.p <= 1:
            raise ConfigError("p: depolarizing parameter must lie in [0, 1]")
        if self.tol <= 0 or self.width <= 0:
            raise ConfigError("tol, width: must be positive")
        parse_grid(self.grid, "grid")
        parse_grid(self.grid2, "grid2")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _coerce(cls(), d, "config")


def parse_grid(spec: str, name: str = "grid") -> np.ndarray:
    """``start:stop:count`` (inclusive linspace) or a comma-separated list."""
    try:
        if ":" in spec:
            a, b, n = spec.split(":")
            n = int(n)
            if n < 1:
                raise ValueError("count must be >= 1")
            return np.linspace(float(a), float(b), n)
        return np.array([float(x) for x in spec.split(",") if x.strip()])
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {spec!r} ({exc})") from None


def _coerce(cfg: RunConfig, values: dict, origin: str) -> RunConfig:
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    out = dataclasses.asdict(cfg)
    for key, raw in values.items():
        k = key.replace("-", "_")
        if k not in types:
            raise ConfigError(f"{origin}: unknown field {key!r}")
        typ = types[k]
        try:
            if typ == "bool":
                out[k] = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif typ == "int":
                out[k] = int(raw)
            elif typ == "float":
                out[k] = float(raw)
            else:
                out[k] = str(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{origin}: field {key!r} has invalid value {raw!r}") from None
    return RunConfig(**out)


def load_config_file(path: str | Path, cfg: RunConfig) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section("run"):
        raise ConfigError(f"{path}: missing [run] section")
    return _coerce(cfg, dict(parser.items("run")), str(path))


# ---------------------------------------------------------------- data files


@dataclass
class Table:
    columns: list[str]
    rows: list[list[float]]
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[self.columns.index(name)] for row in self.rows], dtype=float)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_table(table: Table, path: str | Path, fmt: str = "csv") -> None:
    path = Path(path)
    if fmt == "json":
        payload = {"meta": table.meta, "columns": table.columns, "rows": [[float(v) for v in r] for r in table.rows]}
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
        return
    lines = []
    for k, v in table.meta.items():
        lines.append(f"# {k}={json.dumps(v, sort_keys=True)}")
    lines.append(",".join(table.columns))
    for row in table.rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_table(path: str | Path) -> Table:
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        d = json.loads(text)
        return Table(d["columns"], d["rows"], d.get("meta", {}))
    meta, rows, cols = {}, [], None
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            try:
                meta[k] = json.loads(v)
            except json.JSONDecodeError:
                meta[k] = v
        elif cols is None:
            cols = line.split(",")
        else:
            rows.append([float(x) for x in line.split(",")])
    if cols is None:
        raise ConfigError(f"{path}: no column header")
    return Table(cols, rows, meta)


def _meta(cfg: RunConfig, kind: str, runtime: float | None = None, **extra) -> dict:
    """Header fields; wall-clock data share the last line so reruns differ only there."""
    meta = {
        "tool": f"chanprobe {__version__}",
        "kind": kind,
        "config": cfg.to_dict(),
    }
    meta.update(extra)
    stamp = {"utc": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())}
    if runtime is not None:
        stamp["runtime_s"] = round(runtime, 3)
    meta["timestamp"] = stamp
    return meta


# ---------------------------------------------------------------- scenarios


def _space(cfg: RunConfig) -> fock.FockSpace:
    return fock.FockSpace(cfg.n_max, max_deficit=cfg.max_deficit)


def _squeezed_source(cfg: RunConfig):
    ens, src = sources.cv_ensemble("squeezed", fock.GaussianParams(r=cfg.r, nbar=cfg.nbar), _space(cfg))
    return ens, src, [s.deficit for s in ens.states]


def scan_squeezed(cfg: RunConfig) -> Table:
    ens, src, deficits = _squeezed_source(cfg)
    grid = parse_grid(cfg.grid)
    t0 = time.perf_counter()
    curve = verify.boundary_scan_squeezed(grid, source=src, m=cfg.m, width=cfg.width, tol=cfg.tol)
    rows = [[p.x, p.value, p.t_at_hi, int(bool(p.flag))] for p in curve.points]
    meta = _meta(cfg, "squeezed-boundary", deficits=deficits, overlap=float(np.real(src.overlap)),
                 fidelity_floor=attack.fidelity_floor(*ens.matrices), runtime=time.perf_counter() - t0,
                 failures=curve.failures)
    return Table(["var_x", "var_p_boundary", "verdict_margin", "flag"], rows, meta)


def attack_curve(cfg: RunConfig) -> Table:
    if cfg.scenario != "squeezed":
        raise ConfigError("attack-curve: only the squeezed scenario has a Lagrange boundary")
    ens, src, deficits = _squeezed_source(cfg)
    f2 = attack.fidelity_floor(*ens.matrices)
    grid = parse_grid(cfg.grid)
    grid = grid[grid > f2]
    if grid.size == 0:
        raise ConfigError(f"grid: no Var_x values above the fidelity floor {f2:.6f}")
    cb = attack.lagrange_boundary(*ens.matrices, grid)
    rows = [[x, p, lam, int(pr == "B")] for x, p, lam, pr in zip(cb.var_x, cb.var_p, cb.lam, cb.provenance)]
    meta = _meta(cfg, "squeezed-attack", deficits=deficits, fidelity_floor=f2, region_b_level=cb.level_b,
                 region_b_onset=cb.onset_b)
    return Table(["var_x", "var_p_boundary", "lambda", "region_b"], rows, meta)


def scan_qubit(cfg: RunConfig) -> Table:
    grid = parse_grid(cfg.grid)
    rows, fails = [], 0
    for th in grid:
        pt = verify.p_max_qubit(th, cfg.phi, cfg.mode, cfg.width, cfg.tol)
        try:
            p_eb = attack.qubit_eb_threshold(th, cfg.phi)
        except ContractError:
            p_eb = np.nan
        fails += bool(pt.flag)
        rows.append([th, pt.value, p_eb, int(bool(pt.flag))])
    return Table(["theta", "p_max", "p_eb", "flag"], rows, _meta(cfg, "qubit-boundary", failures=fails))


def scan_displaced(cfg: RunConfig) -> Table:
    a_grid, v_grid = parse_grid(cfg.grid), parse_grid(cfg.grid2)
    dm = verify.domain_map_displaced(cfg.alpha, cfg.nbar, a_grid, v_grid, cfg.m, _space(cfg), cfg.tol)
    code = {verify.QUANTUM: 1, verify.CLASSICAL: 0, verify.BOUNDARY: -1}
    rows = [[a, v, code[dm.labels[i, j]], dm.t_star[i, j]]
            for i, a in enumerate(dm.a_out) for j, v in enumerate(dm.var)]
    contour = [None if np.isnan(c) else float(c) for c in dm.contour()]
    meta = _meta(cfg, "displaced-domain", overlap=dm.meta["overlap"], contour=contour)
    return Table(["a_out", "var", "quantum", "t_star"], rows, meta)


def verify_point(cfg: RunConfig) -> dict:
    if cfg.scenario == "squeezed":
        _, src, deficits = _squeezed_source(cfg)
        factory = verify.squeezed_factory(cfg.vx, source=src, m=cfg.m)
        tmpl = factory(cfg.vp)
        extra = {"deficits": deficits}
    elif cfg.scenario == "displaced":
        ens, src = sources.cv_ensemble("displaced", fock.GaussianParams(nbar=cfg.nbar, alpha=cfg.alpha), _space(cfg))
        tmpl = verify.displaced_template(cfg.aout, cfg.v, src, cfg.m)
        extra = {"deficits": [s.deficit for s in ens.states]}
    else:
        tmpl = verify.qubit_factory(cfg.theta, cfg.phi, cfg.mode)(cfg.p)
        extra = {}
    res = verify.feasibility(tmpl, cfg.tol)
    return {
        "meta": _meta(cfg, "verify-point", **extra),
        "t_star": res.t_star,
        "upper_bound": res.upper_bound,
        "verdict": res.verdict,
        "iterations": res.iterations,
        "runtime_s": res.runtime,
        "template_dim": tmpl.dim,
        "n_params": tmpl.n_params,
    }


def compare(path1: str | Path, path2: str | Path) -> dict:
    """Pointwise gap ``second - first`` between the value columns of two curve files."""
    a, b = read_table(path1), read_table(path2)
    xa, xb = a.column(a.columns[0]), b.column(b.columns[0])
    if xa.shape != xb.shape or not np.allclose(xa, xb, rtol=0, atol=1e-12):
        raise ConfigError("compare: the two files are not on the same grid")
    ya, yb = a.column(a.columns[1]), b.column(b.columns[1])
    gap = yb - ya
    ok = np.isfinite(gap)
    return {
        "x": a.columns[0],
        "n": int(gap.size),
        "max_gap": float(np.max(np.abs(gap[ok]))) if ok.any() else float("nan"),
        "mean_gap": float(np.mean(np.abs(gap[ok]))) if ok.any() else float("nan"),
        "gap": [float(g) for g in gap],
    }


_PLOT_HEAD = '''"""Plot script generated by chanprobe for {data}."""
import csv
import json
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

DATA = {data!r}


def load(path):
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{{"):
        d = json.loads(text)
        return d["columns"], np.array(d["rows"], dtype=float)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    cols = lines[0].split(",")
    rows = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]], dtype=float)
    return cols, rows


cols, rows = load(DATA)
col = {{name: rows[:, k] for k, name in enumerate(cols)}}
fig, ax = plt.subplots(figsize=(5, 4))
'''

_PLOT_BODY = {
    "var_x": '''x = col["var_x"]
ax.plot(x, col["var_p_boundary"], "-", label="boundary")
xs = np.linspace(max(min(x), 1e-3), max(x), 200)
ax.fill_between(xs, 0, 0.25 / xs, color="0.85", label="excluded by uncertainty")
ax.set_xlabel("Var(x)")
ax.set_ylabel("Var(p)")
ax.set_ylim(0, max(1.0, float(np.nanmax(col["var_p_boundary"][np.isfinite(col["var_p_boundary"])]))))
ax.legend()
''',
    "theta": '''ax.plot(col["theta"], col["p_max"], "o-", label="verified p_max")
if "p_eb" in col:
    ax.plot(col["theta"], col["p_eb"], "--", label="EB threshold")
ax.set_xlabel("theta")
ax.set_ylabel("depolarizing p")
ax.legend()
''',
    "a_out": '''a = np.unique(col["a_out"])
v = np.unique(col["var"])
z = col["quantum"].reshape(a.size, v.size)
ax.pcolormesh(a, v, z.T, shading="auto", cmap="Greys")
ax.set_xlabel("a_out")
ax.set_ylabel("V")
''',
}


def emit_plot(data_path: str | Path, out: str | Path | None = None) -> Path:
    table = read_table(data_path)
    key = table.columns[0]
    if key not in _PLOT_BODY:
        raise ConfigError(f"emit-plot: unrecognized data schema (first column {key!r})")
    out = Path(out) if out else Path(str(data_path) + ".plot.py")
    png = str(Path(data_path).with_suffix(".png"))
    script = _PLOT_HEAD.format(data=str(data_path)) + _PLOT_BODY[key]
    script += f'fig.tight_layout()\nfig.savefig(sys.argv[1] if len(sys.argv) > 1 else {png!r})\n'
    out.write_text(script)
    return out


# ---------------------------------------------------------------- entry point

_COMMANDS = {
    "scan-squeezed": scan_squeezed,
    "scan-displaced": scan_displaced,
    "scan-qubit": scan_qubit,
    "attack-curve": attack_curve,
}


def run(cfg: RunConfig) -> int:
    """Execute a configured scan and write its artifacts; returns the exit status."""
    cfg.validate()
    if cfg.command == "verify-point":
        result = verify_point(cfg)
        text = json.dumps(result, indent=1, sort_keys=True)
        if cfg.output:
            Path(cfg.output).write_text(text + "\n")
        else:
            print(text)
        return EXIT_OK
    table = _COMMANDS[cfg.command](cfg)
    out = cfg.output or f"{cfg.command}.{cfg.format}"
    write_table(table, out, cfg.format)
    if cfg.emit_plot:
        emit_plot(out)
    flags = [row[-1] for row in table.rows] if table.columns[-1] == "flag" else []
    if flags and sum(1 for f in flags if f) > FAIL_FRACTION * len(flags):
        log.error("%d of %d points failed", sum(1 for f in flags if f), len(flags))
        return EXIT_NUMERIC
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--scenario", choices=["qubit", "squeezed", "displaced"])
    for name, typ in [("theta", float), ("phi", float), ("r", float), ("nbar", float), ("alpha", float),
                      ("n-max", int), ("max-deficit", float), ("m", int), ("vx", float), ("vp", float),
                      ("aout", float), ("v", float), ("p", float), ("tol", float), ("width", float),
                      ("seed", int)]:
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--grid", help="start:stop:count or comma list")
    p.add_argument("--grid2", help="second grid axis (displaced variance)")
    p.add_argument("--mode", choices=["naive", "optimal", "optimal+C"])
    p.add_argument("--output", "-o")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--emit-plot", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chanprobe", description="Quantum-channel verification scans")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("scan-squeezed", "scan-displaced", "scan-qubit", "attack-curve", "verify-point"):
        _add_common(sub.add_parser(name))
    cp = sub.add_parser("compare", help="gap between two curve files on the same grid")
    cp.add_argument("run1")
    cp.add_argument("run2")
    ep = sub.add_parser("emit-plot", help="write a matplotlib script for a data file")
    ep.add_argument("data")
    ep.add_argument("--output", "-o")
    return parser


_DEFAULT_SCENARIO = {"scan-squeezed": "squeezed", "scan-displaced": "displaced", "scan-qubit": "qubit",
                     "attack-curve": "squeezed"}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command, scenario=_DEFAULT_SCENARIO.get(args.command, "squeezed"))
    if args.command == "scan-qubit":
        cfg = dataclasses.replace(cfg, grid="0.2:1.5:20")
    elif args.command == "scan-displaced":
        cfg = dataclasses.replace(cfg, grid="0.0:0.6:20", grid2="0.5:1.5:20")
    if args.config:
        cfg = load_config_file(args.config, cfg)
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config", "verbose")}
    return _coerce(cfg, flags, "flags")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            print(json.dumps(compare(args.run1, args.run2), indent=1))
            return EXIT_OK
        if args.command == "emit-plot":
            print(emit_plot(args.data, args.output))
            return EXIT_OK
        return run(config_from_args(args))
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except verify.SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
