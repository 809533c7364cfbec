"""Configuration files, legacy VTK output and CSV reports.

Configuration is INI text with sections ``[macro]``, ``[micro]``,
``[parameters]``, ``[solver]``, ``[mms]`` and ``[output]``.  See
``configs/*.ini`` in the package for complete examples.
"""

from __future__ import annotations

import configparser
import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .coupled import ProblemData, TwoScaleState
from .geometry import BoundaryRoles, Grid, RectDomain, Side, build_grid
from .mapping import Diffeo, MapBounds

SECTIONS = ("macro", "micro", "parameters", "solver", "mms", "output")
REQUIRED = {
    "macro": ("n",),
    "micro": ("n", "zeta0", "zeta1"),
    "parameters": ("Dv", "Dw", "kappa1", "kappa2", "kappa3", "kappa4"),
}


class ConfigError(ValueError):
    """Invalid or incomplete configuration; names the offending section/key."""

    def __init__(self, message: str, section: str | None = None, key: str | None = None):
        where = f"[{section}] {key}: " if section and key else f"[{section}]: " if section else ""
        super().__init__(where + message)
        self.section = section
        self.key = key


def _sides(text: str) -> tuple[Side, ...]:
    parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
    return tuple(Side.parse(p) for p in parts)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(";", ",").split(",") if p.strip())


def _pair(text: str) -> tuple[float, float]:
    vals = [float(p) for p in text.split(",")]
    if len(vals) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {text!r}")
    return vals[0], vals[1]


def _fmt_sides(sides: Sequence[Side]) -> str:
    return ", ".join(s.value for s in sides)


@dataclass(frozen=True)
class Config:
    """Validated run configuration. Expressions are kept as source text."""

    macro_n: int
    micro_n: int
    zeta0: str
    zeta1: str
    Dv: float
    Dw: str
    kappa: tuple[float, float, float, float]
    macro_lo: tuple[float, float] = (-1.0, -1.0)
    macro_hi: tuple[float, float] = (1.0, 1.0)
    dirichlet: tuple[Side, ...] = (Side.LEFT,)
    gamma_i: tuple[Side, ...] = (Side.LEFT,)
    gamma_o: tuple[Side, ...] = (Side.RIGHT,)
    fu: str = "0"
    fv: str = "0"
    fw: str = "0"
    u0: str = "0"
    tol_outer: float = 1e-8
    max_outer: int = 100
    tol_inner: float = 1e-10
    threads: int | None = None
    c_lo: float = 1e-6
    c_hi: float = 1e6
    mms_u: str | None = None
    mms_v: str | None = None
    mms_w: str | None = None
    sweep: tuple[int, ...] = ()
    out_dir: str = "out"
    micro_viz_scale: float = 0.1
    bench_threads: tuple[int, ...] = (1,)
    name: str = "run"

    # ---- derived objects ------------------------------------------------

    @property
    def has_mms(self) -> bool:
        return self.mms_u is not None

    @property
    def params(self) -> dict[str, float]:
        k1, k2, k3, k4 = self.kappa
        return {"Dv": self.Dv, "kappa1": k1, "kappa2": k2, "kappa3": k3, "kappa4": k4}

    def roles(self) -> BoundaryRoles:
        return BoundaryRoles.from_lists(self.dirichlet, self.gamma_i, self.gamma_o)

    def diffeo(self) -> Diffeo:
        return Diffeo.from_strings(self.zeta0, self.zeta1)

    def bounds(self) -> MapBounds:
        return MapBounds(self.c_lo, self.c_hi)

    def macro_domain(self) -> RectDomain:
        return RectDomain(self.macro_lo, self.macro_hi)

    def macro_grid(self, n: int | None = None) -> Grid:
        return build_grid(self.macro_domain(), n or self.macro_n)

    def micro_grid(self, n: int | None = None) -> Grid:
        return build_grid(RectDomain((-1.0, -1.0), (1.0, 1.0)), n or self.micro_n)

    def expr(self, text: str) -> ex.Expr:
        return ex.parse(text, self.params)

    def problem_data(self) -> ProblemData:
        return ProblemData(
            kappa=self.kappa, Dv=self.Dv, Dw=self.expr(self.Dw), diffeo=self.diffeo(), roles=self.roles(),
            fu=self.expr(self.fu), fv=self.expr(self.fv), fw=self.expr(self.fw), u0=self.expr(self.u0),
        )

    def manufactured_case(self):
        from .verify import ManufacturedCase

        if not self.has_mms:
            raise ConfigError("section missing or incomplete (need u, v, w)", "mms")
        return ManufacturedCase(
            u=self.expr(self.mms_u), v=self.expr(self.mms_v), w=self.expr(self.mms_w), diffeo=self.diffeo(),
            kappa=self.kappa, Dv=self.Dv, Dw=self.expr(self.Dw), roles=self.roles(), u0=self.expr(self.u0),
        )


def _get(cp: configparser.ConfigParser, section: str, key: str, conv, default=None, missing=None):
    if not cp.has_section(section) or not cp.has_option(section, key):
        if missing is not None:
            missing.append(f"[{section}] {key}")
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except ex.ExprSyntaxError as err:
        raise ConfigError(f"{err} (at position {err.position})", section, key) from None
    except (ValueError, ex.ExprError) as err:
        raise ConfigError(str(err), section, key) from None


def parse_config(text: str, name: str = "run") -> Config:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case (Dv, Dw)
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed file: {err}") from None
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")

    missing: list[str] = []
    d = Config.__dataclass_fields__
    k = {}
    k["macro_n"] = _get(cp, "macro", "n", int, missing=missing)
    k["micro_n"] = _get(cp, "micro", "n", int, missing=missing)
    k["zeta0"] = _get(cp, "micro", "zeta0", str.strip, missing=missing)
    k["zeta1"] = _get(cp, "micro", "zeta1", str.strip, missing=missing)
    k["Dv"] = _get(cp, "parameters", "Dv", float, missing=missing)
    k["Dw"] = _get(cp, "parameters", "Dw", str.strip, missing=missing)
    kap = [_get(cp, "parameters", f"kappa{i}", float, missing=missing) for i in range(1, 5)]
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))
    k["kappa"] = tuple(kap)

    k["macro_lo"] = _get(cp, "macro", "lo", _pair, d["macro_lo"].default)
    k["macro_hi"] = _get(cp, "macro", "hi", _pair, d["macro_hi"].default)
    k["dirichlet"] = _get(cp, "macro", "dirichlet", _sides, d["dirichlet"].default)
    k["gamma_i"] = _get(cp, "micro", "gamma_i", _sides, d["gamma_i"].default)
    k["gamma_o"] = _get(cp, "micro", "gamma_o", _sides, d["gamma_o"].default)
    for key in ("fu", "fv", "fw", "u0"):
        k[key] = _get(cp, "parameters", key, str.strip, d[key].default)
    k["tol_outer"] = _get(cp, "solver", "tol_outer", float, d["tol_outer"].default)
    k["max_outer"] = _get(cp, "solver", "max_outer", int, d["max_outer"].default)
    k["tol_inner"] = _get(cp, "solver", "tol_inner", float, d["tol_inner"].default)
    k["threads"] = _get(cp, "solver", "threads", int, None)
    k["c_lo"] = _get(cp, "solver", "c_lo", float, d["c_lo"].default)
    k["c_hi"] = _get(cp, "solver", "c_hi", float, d["c_hi"].default)
    k["mms_u"] = _get(cp, "mms", "u", str.strip, None)
    k["mms_v"] = _get(cp, "mms", "v", str.strip, None)
    k["mms_w"] = _get(cp, "mms", "w", str.strip, None)
    k["sweep"] = _get(cp, "mms", "sweep", _ints, ())
    k["out_dir"] = _get(cp, "output", "dir", str.strip, d["out_dir"].default)
    k["micro_viz_scale"] = _get(cp, "output", "micro_viz_scale", float, d["micro_viz_scale"].default)
    k["bench_threads"] = _get(cp, "output", "bench_threads", _ints, d["bench_threads"].default)
    k["name"] = _get(cp, "output", "name", str.strip, name)
    cfg = Config(**k)
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    for key, n in (("macro", cfg.macro_n), ("micro", cfg.micro_n)):
        if n < 1:
            raise ConfigError(f"grid size must be >= 1, got {n}", key, "n")
    if cfg.Dv <= 0:
        raise ConfigError(f"must be positive, got {cfg.Dv}", "parameters", "Dv")
    for i, kv in enumerate(cfg.kappa, 1):
        if kv < 0:
            raise ConfigError(f"must be non-negative, got {kv}", "parameters", f"kappa{i}")
    params = cfg.params
    checks = [("micro", "zeta0", cfg.zeta0), ("micro", "zeta1", cfg.zeta1), ("parameters", "Dw", cfg.Dw),
              ("parameters", "fu", cfg.fu), ("parameters", "fv", cfg.fv), ("parameters", "fw", cfg.fw),
              ("parameters", "u0", cfg.u0)]
    if cfg.mms_u is not None or cfg.mms_v is not None or cfg.mms_w is not None:
        for key in ("u", "v", "w"):
            if getattr(cfg, f"mms_{key}") is None:
                raise ConfigError("required when [mms] is present", "mms", key)
        checks += [("mms", "u", cfg.mms_u), ("mms", "v", cfg.mms_v), ("mms", "w", cfg.mms_w)]
    for section, key, text in checks:
        try:
            ex.parse(text, params)
        except ex.ExprSyntaxError as err:
            raise ConfigError(f"{err} (at position {err.position})", section, key) from None
        except ex.ExprError as err:
            raise ConfigError(str(err), section, key) from None
    try:
        cfg.roles()
        MapBounds(cfg.c_lo, cfg.c_hi)
        RectDomain(cfg.macro_lo, cfg.macro_hi)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if any(t < 1 for t in cfg.bench_threads):
        raise ConfigError("thread counts must be >= 1", "output", "bench_threads")
    if any(n < 1 for n in cfg.sweep):
        raise ConfigError("grid sizes must be >= 1", "mms", "sweep")


def load_config(path: str | os.PathLike) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    return parse_config(text, name=path.stem)


def dump_config(cfg: Config) -> str:
    """INI text that loads back to an identical :class:`Config` (defaults included)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["macro"] = {"n": str(cfg.macro_n), "lo": "%r, %r" % cfg.macro_lo, "hi": "%r, %r" % cfg.macro_hi,
                   "dirichlet": _fmt_sides(cfg.dirichlet)}
    cp["micro"] = {"n": str(cfg.micro_n), "zeta0": cfg.zeta0, "zeta1": cfg.zeta1,
                   "gamma_i": _fmt_sides(cfg.gamma_i), "gamma_o": _fmt_sides(cfg.gamma_o)}
    par = {"Dv": repr(cfg.Dv), "Dw": cfg.Dw}
    par.update({f"kappa{i}": repr(v) for i, v in enumerate(cfg.kappa, 1)})
    par.update(fu=cfg.fu, fv=cfg.fv, fw=cfg.fw, u0=cfg.u0)
    cp["parameters"] = par
    solver = {"tol_outer": repr(cfg.tol_outer), "max_outer": str(cfg.max_outer),
              "tol_inner": repr(cfg.tol_inner), "c_lo": repr(cfg.c_lo), "c_hi": repr(cfg.c_hi)}
    if cfg.threads is not None:
        solver["threads"] = str(cfg.threads)
    cp["solver"] = solver
    if cfg.has_mms:
        mms = {"u": cfg.mms_u, "v": cfg.mms_v, "w": cfg.mms_w}
        if cfg.sweep:
            mms["sweep"] = ", ".join(map(str, cfg.sweep))
        cp["mms"] = mms
    cp["output"] = {"dir": cfg.out_dir, "micro_viz_scale": repr(cfg.micro_viz_scale),
                    "bench_threads": ", ".join(map(str, cfg.bench_threads)), "name": cfg.name}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def bundled_config(name: str) -> Path:
    """Path of a configuration shipped with the package (e.g. ``"case_a"``)."""
    path = Path(__file__).parent / "configs" / (name if name.endswith(".ini") else name + ".ini")
    if not path.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return path


# --------------------------------------------------------------------------
# VTK legacy ASCII
# --------------------------------------------------------------------------


class VtkFormatError(ValueError):
    pass


@dataclass
class VtkDataset:
    points: np.ndarray  # (n, 3)
    cells: np.ndarray  # (c, 4)
    point_data: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise VtkFormatError("points must have shape (n, 3)")
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= len(self.points)):
            raise VtkFormatError("cell connectivity index out of range")
        for name, arr in self.point_data.items():
            if len(arr) != len(self.points):
                raise VtkFormatError(f"point data {name!r} has {len(arr)} values for {len(self.points)} points")
            if not name or any(c.isspace() for c in name):
                raise VtkFormatError(f"invalid array name {name!r}")


def _fmt(v: float) -> str:
    return repr(float(v))


def format_vtk(ds: VtkDataset, title: str = "twoscale output") -> str:
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(ds.points)} double"]
    lines += [" ".join(_fmt(c) for c in p) for p in ds.points]
    lines.append(f"CELLS {len(ds.cells)} {5 * len(ds.cells)}")
    lines += ["4 " + " ".join(str(int(i)) for i in c) for c in ds.cells]
    lines.append(f"CELL_TYPES {len(ds.cells)}")
    lines += ["9"] * len(ds.cells)
    if ds.point_data:
        lines.append(f"POINT_DATA {len(ds.points)}")
        for name, arr in ds.point_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [_fmt(v) for v in np.asarray(arr, dtype=float)]
    return "\n".join(lines) + "\n"


def write_vtk(ds: VtkDataset, path: str | os.PathLike, title: str = "twoscale output") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_vtk(ds, title))
    return path


def _lift(points2d: np.ndarray) -> np.ndarray:
    return np.column_stack([points2d, np.zeros(len(points2d))])


def write_vtk_macro(grid: Grid, fields: Mapping[str, np.ndarray], path: str | os.PathLike) -> Path:
    """Macro grid with one scalar array per field (nodal values)."""
    ds = VtkDataset(_lift(grid.nodes), grid.cells, {k: np.asarray(v, dtype=float) for k, v in fields.items()})
    return write_vtk(ds, path, "macro solution")


def micro_patches(V: np.ndarray, macro: Grid, micro: Grid, diffeo: Diffeo, scale: float) -> VtkDataset:
    """All micro solutions as one dataset; patch ``i`` sits at ``x_i + s * zeta(x_i, yhat)``."""
    X = macro.nodes
    Y = diffeo(X[:, None, :], micro.nodes[None, :, :])  # (N, n, 2)
    pts = (X[:, None, :] + scale * Y).reshape(-1, 2)
    offsets = (np.arange(macro.n_nodes) * micro.n_nodes)[:, None, None]
    cells = (micro.cells[None, :, :] + offsets).reshape(-1, 4)
    return VtkDataset(_lift(pts), cells, {"v": np.asarray(V, dtype=float).reshape(-1)})


def write_vtk_micro(state: TwoScaleState, macro: Grid, micro: Grid, diffeo: Diffeo, scale: float,
                    path: str | os.PathLike) -> Path:
    return write_vtk(micro_patches(state.V, macro, micro, diffeo, scale), path, "micro solutions")


def read_vtk(path: str | os.PathLike) -> VtkDataset:
    """Parse (and check) a legacy ASCII unstructured grid of quads."""
    tokens_by_line = [ln.strip() for ln in Path(path).read_text().splitlines()]
    if not tokens_by_line or tokens_by_line[0] != "# vtk DataFile Version 3.0":
        raise VtkFormatError("missing or wrong header line")
    if len(tokens_by_line) < 5 or tokens_by_line[2] != "ASCII":
        raise VtkFormatError("only ASCII files are supported")
    if tokens_by_line[3] != "DATASET UNSTRUCTURED_GRID":
        raise VtkFormatError("expected DATASET UNSTRUCTURED_GRID")
    body = [ln for ln in tokens_by_line[4:] if ln]
    pos = 0

    def header(word: str) -> list[str]:
        nonlocal pos
        if pos >= len(body) or not body[pos].startswith(word + " "):
            raise VtkFormatError(f"expected {word} section at line {pos + 5}")
        parts = body[pos].split()
        pos += 1
        return parts

    def take(n: int) -> list[str]:
        nonlocal pos
        if pos + n > len(body):
            raise VtkFormatError("unexpected end of file")
        out = body[pos:pos + n]
        pos += n
        return out

    parts = header("POINTS")
    n = int(parts[1])
    if len(parts) != 3 or parts[2] != "double":
        raise VtkFormatError("POINTS must be '<n> double'")
    points = np.array([[float(t) for t in ln.split()] for ln in take(n)]).reshape(n, 3)
    parts = header("CELLS")
    nc, size = int(parts[1]), int(parts[2])
    rows = [[int(t) for t in ln.split()] for ln in take(nc)]
    if sum(len(r) for r in rows) != size or any(r[0] != 4 or len(r) != 5 for r in rows):
        raise VtkFormatError("CELLS size mismatch or non-quad cell")
    cells = np.array([r[1:] for r in rows], dtype=np.int64).reshape(nc, 4)
    parts = header("CELL_TYPES")
    if int(parts[1]) != nc or any(t != "9" for t in take(nc)):
        raise VtkFormatError("CELL_TYPES must list 9 for every cell")
    data = {}
    if pos < len(body):
        parts = header("POINT_DATA")
        if int(parts[1]) != n:
            raise VtkFormatError("POINT_DATA count differs from POINTS")
        while pos < len(body):
            parts = header("SCALARS")
            if len(parts) != 4 or parts[2] != "double" or parts[3] != "1":
                raise VtkFormatError("SCALARS must be '<name> double 1'")
            if take(1)[0] != "LOOKUP_TABLE default":
                raise VtkFormatError("expected LOOKUP_TABLE default")
            data[parts[1]] = np.array([float(t) for t in take(n)])
    return VtkDataset(points, cells, data)


def check_vtk(path: str | os.PathLike) -> bool:
    """True if ``path`` parses as a well-formed quad grid; use :func:`read_vtk` for the reason."""
    try:
        read_vtk(path)
    except (VtkFormatError, ValueError, IndexError):
        return False
    return True


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


@dataclass
class BenchRow:
    threads: int
    wall_seconds: float
    speedup: float


@dataclass
class BenchReport:
    name: str
    rows: list[BenchRow] = field(default_factory=list)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.3e}"
    return str(v)


def _table(report) -> tuple[list[str], list[list]]:
    from .verify import ErrorReport

    if isinstance(report, ErrorReport):
        header = ["MDoFs", "H", "e_uw", "e_uw_grad", "p_M", "q_M", "mDoFs", "h", "e_v", "e_v_grad", "p_m", "q_m"]
        rows = [[r.macro_dofs, r.H, r.e_uw, r.e_uw_grad, r.p_M, r.q_M, r.micro_dofs, r.h, r.e_v, r.e_v_grad,
                 r.p_m, r.q_m] for r in report.rows]
        return header, rows
    if isinstance(report, BenchReport):
        return ["threads", "wall_seconds", "speedup"], [[r.threads, r.wall_seconds, r.speedup] for r in report.rows]
    if isinstance(report, TwoScaleState):
        return ["sweep", "residual"], [[k + 1, r] for k, r in enumerate(report.residual_history)]
    raise TypeError(f"cannot write {type(report).__name__} as CSV")


def format_csv(report) -> str:
    header, rows = _table(report)
    if not rows:
        raise ValueError("report is empty")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([_cell(v) for v in row] for row in rows)
    return buf.getvalue()


def write_csv(report, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_csv(report))
    return path


def read_csv(path: str | os.PathLike) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
