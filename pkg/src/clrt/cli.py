"""Command-line front end: run reachtube computations from JSON configs.

A config names a registered system (or defines one by equation strings), the
horizon, the initial ball and optional algorithm settings.  Each run writes
``segments.csv`` (one row per continuous segment), ``discrete.csv`` (the
discrete end balls), ``report.json`` and, on request, projected ellipses for
plotting and a JSONL log of the branch-and-prune boxes.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .algorithm import ClrtConfig, Tube, TubeSegment, ftle_bound, initial_radius_from_box, run
from .errors import BadDimensionPair, BadParameter, ClrtError, ConfigError, UnknownSystem
from .interval import Interval, up
from .linalg import Metric, decompose
from .systems import OdeSystem, builtin, builtin_names, builtin_spec, system_from_equations

__all__ = [
    "RunReport",
    "segment_volume",
    "load_config",
    "run_benchmark",
    "emit_plot_data",
    "benchmark_names",
    "benchmark_config_path",
    "main",
]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# volumes and reports
# ---------------------------------------------------------------------------

def _unit_ball_log_volume(n: int) -> float:
    return 0.5 * n * math.log(math.pi) - math.lgamma(0.5 * n + 1.0)


def _ellipsoid_volume(radius: float, log_abs_det_A: float, n: int) -> float:
    v = math.exp(n * math.log(radius) + _unit_ball_log_volume(n) - log_abs_det_A)
    return float(up(v * (1.0 + 1e-13)))


def segment_volume(seg: TubeSegment) -> float:
    """Volume ``V_n Delta^n / sqrt(det M)`` of the continuous ellipsoid, rounded up."""
    ball = seg.continuous
    return _ellipsoid_volume(ball.radius, ball.metric.log_abs_det_A(), ball.dim)


def _segment_summary(idx: int, seg: TubeSegment) -> dict:
    ball = seg.continuous
    return {
        "idx": idx,
        "t_lo": seg.t_lo,
        "t_hi": seg.t_hi,
        "h": seg.h,
        "lambda": seg.lam,
        "delta_small": seg.delta_small,
        "delta_big": seg.delta_big,
        "volume": segment_volume(seg),
        "center_mid": ball.center_box.mid().tolist(),
        "center_rad": ball.center_box.rad().tolist(),
        "M": ball.metric.M.tolist(),
        "tilde_delta": seg.tilde_delta,
        "switched": bool(seg.switched),
        "backward_tilde_delta": None if seg.backward is None else seg.backward.tilde_delta,
    }


def _discrete_summary(idx: int, seg: TubeSegment) -> dict:
    ball = seg.discrete_end
    return {
        "idx": idx,
        "t": seg.t_hi,
        "radius": ball.radius,
        "center_mid": ball.center_box.mid().tolist(),
        "center_rad": ball.center_box.rad().tolist(),
        "M": ball.metric.M.tolist(),
    }


@dataclass
class RunReport:
    """Summary of one run; volumes follow the total/average convention of the benchmark table."""

    system: str
    config: dict
    segments: list[dict]
    discrete: list[dict]
    total_volume: float
    avg_volume: float
    ftle_upper: float | None
    wall_time: float
    status: str
    reason: str = ""
    dim: int = 0
    files: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return self.status == "complete"

    def to_json(self) -> dict:
        return asdict(self)


def _ftle_upper(tube: Tube, horizon: float) -> float | None:
    if not tube or horizon <= 0:
        return None
    total = math.fsum(math.log(seg.lam) for seg in tube)
    return ftle_bound(math.exp(total + 1e-12 * max(1.0, abs(total))), horizon)


def build_report(system: OdeSystem, cfg_echo: dict, tube: Tube, wall_time: float) -> RunReport:
    segs = [_segment_summary(i, s) for i, s in enumerate(tube)]
    total = math.fsum(s["volume"] for s in segs)
    avg = total / len(segs) if segs else 0.0
    horizon = (tube[-1].t_hi - tube[0].t_lo) if tube else 0.0
    return RunReport(
        system=system.name,
        config=cfg_echo,
        segments=segs,
        discrete=[_discrete_summary(i, s) for i, s in enumerate(tube)],
        total_volume=total,
        avg_volume=avg,
        ftle_upper=_ftle_upper(tube, horizon),
        wall_time=wall_time,
        status="complete" if tube.complete else "partial",
        reason=tube.reason,
        dim=system.dim,
    )


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_TOP_FIELDS = {
    "system", "params", "t0", "T", "k", "initial_center", "initial_radius", "initial_diameter",
    "metric", "eps_ist", "c_delta", "c_m", "integrator_order", "bloat_mode", "grad_splits",
    "switch_volume_cap", "cover_discrete_end", "seed", "backward_bloat", "caps", "description",
    "transport_metric", "transport_cond_max",
}
_CAP_FIELDS = {
    "bloat_cap_factor", "prune_budget", "prune_max_depth", "eps_rel", "estimate_pad",
    "time_weight", "h_floor_rel", "max_bloat_retries",
}
_RENAMED = {"integrator_order": "order"}


def _number(raw: dict, key: str, path: str, kind=float):
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}{key}: expected a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"{path}{key}: expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(float(value)) and key != "switch_volume_cap":
        raise ConfigError(f"{path}{key}: must be finite")
    return float(value)


def _vector(raw, key: str) -> np.ndarray:
    value = raw[key]
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a list of numbers") from None
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{key}: expected a finite list of numbers")
    return arr


def _system_from_config(raw: dict) -> tuple[OdeSystem, dict]:
    if "system" not in raw:
        raise ConfigError("system: missing field")
    spec = raw["system"]
    params = raw.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params: expected an object")
    try:
        if isinstance(spec, str):
            return builtin(spec, params), builtin_spec(spec)
        if isinstance(spec, dict):
            eqs = spec.get("equations")
            if not isinstance(eqs, list) or not eqs:
                raise ConfigError("system.equations: expected a non-empty list of strings")
            merged = dict(spec.get("params") or {})
            merged.update(params)
            sysobj = system_from_equations(str(spec.get("name", "custom")), [str(e) for e in eqs], merged)
            return sysobj, {}
    except UnknownSystem as exc:
        raise ConfigError(f"system: unknown system {exc.args[0]!r}; known: {', '.join(builtin_names())}") from None
    except BadParameter as exc:
        raise ConfigError(f"params: {exc}") from None
    raise ConfigError("system: expected a registered name or an object with equations")


def load_config(raw: dict, seed: int | None = None, backward_bloat: bool | None = None):
    """Validate a config mapping; returns ``(system, ClrtConfig, echo)``.

    Missing optional fields take the library defaults; the echo lists every
    resolved value.  Problems raise :class:`ConfigError` naming the field.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = set(raw) - _TOP_FIELDS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
    system, sys_spec = _system_from_config(raw)
    n = system.dim

    kwargs: dict = {}
    if "T" not in raw and "T" not in sys_spec:
        raise ConfigError("T: missing field")
    kwargs["T"] = _number(raw, "T", "") if "T" in raw else float(sys_spec["T"])
    if "t0" in raw:
        kwargs["t0"] = _number(raw, "t0", "")
    if "k" in raw:
        kwargs["k"] = _number(raw, "k", "", int)

    if "initial_center" in raw:
        center = _vector(raw, "initial_center")
    elif "initial_center" in sys_spec:
        center = np.asarray(sys_spec["initial_center"], dtype=float)
    else:
        raise ConfigError("initial_center: missing field")
    if center.shape != (n,):
        raise ConfigError(f"initial_center: expected {n} entries, got {center.shape[0]}")

    if "metric" in raw:
        try:
            M0 = decompose(np.asarray(raw["metric"], dtype=float))
        except (ClrtError, ValueError) as exc:
            raise ConfigError(f"metric: {exc}") from None
        if M0.dim != n:
            raise ConfigError(f"metric: expected a {n}x{n} matrix")
    else:
        M0 = Metric.identity(n)
    kwargs["M0"] = M0

    if "initial_radius" in raw and "initial_diameter" in raw:
        raise ConfigError("initial_radius: give either initial_radius or initial_diameter")
    if "initial_radius" in raw:
        delta0 = _number(raw, "initial_radius", "")
    else:
        if "initial_diameter" in raw:
            diam = raw["initial_diameter"]
        elif "initial_diameter" in sys_spec:
            diam = sys_spec["initial_diameter"]
        else:
            raise ConfigError("initial_radius: missing field")
        widths = np.broadcast_to(np.asarray(diam, dtype=float), (n,))
        if not np.all(widths > 0):
            raise ConfigError("initial_diameter: must be positive")
        delta0 = initial_radius_from_box(0.5 * widths, M0)
    if not delta0 > 0:
        raise ConfigError("initial_radius: must be positive")
    kwargs["x0_box"] = Interval(center, center)
    kwargs["delta0"] = delta0

    for key in ("eps_ist", "c_delta", "c_m", "switch_volume_cap", "transport_cond_max"):
        if key in raw:
            kwargs[key] = _number(raw, key, "")
    for key in ("integrator_order", "grad_splits", "seed"):
        if key in raw:
            kwargs[_RENAMED.get(key, key)] = _number(raw, key, "", int)
    for key in ("cover_discrete_end", "backward_bloat", "transport_metric"):
        if key in raw:
            if not isinstance(raw[key], bool):
                raise ConfigError(f"{key}: expected true or false")
            kwargs[key] = raw[key]
    if "bloat_mode" in raw:
        kwargs["bloat_mode"] = str(raw["bloat_mode"])
    caps = raw.get("caps") or {}
    if not isinstance(caps, dict):
        raise ConfigError("caps: expected an object")
    unknown = set(caps) - _CAP_FIELDS
    if unknown:
        raise ConfigError(f"caps.{sorted(unknown)[0]}: unknown field")
    for key in caps:
        kind = int if key in ("prune_budget", "prune_max_depth", "max_bloat_retries") else float
        kwargs[key] = _number(caps, key, "caps.", kind)
    if seed is not None:
        kwargs["seed"] = int(seed)
    if backward_bloat:
        kwargs["backward_bloat"] = True

    try:
        cfg = ClrtConfig(**kwargs)
    except ConfigError:
        raise
    except (ClrtError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    echo = {"system": system.name, "dim": n, "params": dict(system.params),
            "initial_center": center.tolist()}
    for f in fields(ClrtConfig):
        value = getattr(cfg, f.name)
        if f.name == "x0_box":
            continue
        if f.name == "M0":
            value = value.M.tolist()
        echo[f.name] = value
    echo["grad_splits_resolved"] = cfg.splits
    return system, cfg, echo


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def _segment_columns(n: int) -> list[str]:
    return (["idx", "t_lo", "t_hi", "h", "lambda", "delta_small", "delta_big", "volume"]
            + [f"center_mid_{i}" for i in range(n)]
            + [f"center_rad_{i}" for i in range(n)]
            + [f"M_{i}_{j}" for i in range(n) for j in range(n)])


def write_segments_csv(report: RunReport, path: Path):
    n = report.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_segment_columns(n))
        for s in report.segments:
            row = [s["idx"]] + [_fmt(s[k]) for k in ("t_lo", "t_hi", "h", "lambda", "delta_small",
                                                       "delta_big", "volume")]
            row += [_fmt(v) for v in s["center_mid"]]
            row += [_fmt(v) for v in s["center_rad"]]
            row += [_fmt(v) for r in s["M"] for v in r]
            w.writerow(row)


def read_segments_csv(path: Path) -> list[dict]:
    """Parse a segments CSV back into summaries (floats round-trip exactly)."""
    out = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(1 for h in header if h.startswith("center_mid_"))
    for row in body:
        rec = dict(zip(header, row))
        out.append({
            "idx": int(rec["idx"]),
            **{k: float(rec[k]) for k in ("t_lo", "t_hi", "h", "lambda", "delta_small", "delta_big", "volume")},
            "center_mid": [float(rec[f"center_mid_{i}"]) for i in range(n)],
            "center_rad": [float(rec[f"center_rad_{i}"]) for i in range(n)],
            "M": [[float(rec[f"M_{i}_{j}"]) for j in range(n)] for i in range(n)],
        })
    return out


def write_discrete_csv(report: RunReport, path: Path):
    n = report.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["idx", "t", "radius"] + [f"center_mid_{i}" for i in range(n)]
                   + [f"center_rad_{i}" for i in range(n)]
                   + [f"M_{i}_{j}" for i in range(n) for j in range(n)])
        for s in report.discrete:
            w.writerow([s["idx"], _fmt(s["t"]), _fmt(s["radius"])]
                       + [_fmt(v) for v in s["center_mid"]] + [_fmt(v) for v in s["center_rad"]]
                       + [_fmt(v) for r in s["M"] for v in r])


def projected_ellipse(center, M, radius: float, dims, points: int = 64) -> np.ndarray:
    """Boundary of the projection of ``{x : (x-c)^T M (x-c) <= radius^2}`` onto ``dims``.

    The projected shape matrix is the Schur complement of the eliminated
    block of ``M``.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    i, j = dims
    keep = [i, j]
    rest = [k for k in range(n) if k not in keep]
    S = M[np.ix_(keep, keep)]
    if rest:
        S = S - M[np.ix_(keep, rest)] @ np.linalg.solve(M[np.ix_(rest, rest)], M[np.ix_(rest, keep)])
    S = 0.5 * (S + S.T)
    R = np.linalg.cholesky(S).T  # S = R^T R
    theta = np.linspace(0.0, 2.0 * np.pi, points + 1)
    circle = np.stack([np.cos(theta), np.sin(theta)])
    pts = np.linalg.solve(R, radius * circle).T
    return pts + np.asarray(center, dtype=float)[keep]


def emit_plot_data(report: RunReport, dims, stride: int, path: Path, points: int = 64) -> Path:
    """CSV of projected segment ellipses (every ``stride``-th segment).

    Columns: ``segment_idx, point_idx, u, v``.
    """
    n = report.dim
    try:
        i, j = (int(d) for d in dims)
    except (TypeError, ValueError):
        raise BadDimensionPair(f"expected two indices, got {dims!r}") from None
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise BadDimensionPair(f"invalid projection pair ({i}, {j}) for dimension {n}")
    if stride < 1:
        raise BadDimensionPair("stride must be at least 1")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_idx", "point_idx", "u", "v"])
        for s in report.segments[::stride]:
            pts = projected_ellipse(s["center_mid"], s["M"], s["delta_big"], (i, j), points)
            for k, (u, v) in enumerate(pts):
                w.writerow([s["idx"], k, _fmt(u), _fmt(v)])
    return path


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def benchmark_names() -> list[str]:
    folder = resources.files("clrt").joinpath("data", "benchmarks")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def benchmark_config_path(name: str) -> Path:
    if name not in benchmark_names():
        raise ConfigError(f"unknown benchmark {name!r}; known: {', '.join(benchmark_names())}")
    return Path(str(resources.files("clrt").joinpath("data", "benchmarks", f"{name}.json")))


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from None


def run_benchmark(config_path, output_dir, *, plot=None, stride: int = 20, dump_prune: bool = False,
                  seed: int | None = None, backward_bloat: bool = False, progress=None) -> RunReport:
    """Run one config and write its artifacts to ``output_dir``."""
    raw = _read_json(config_path)
    system, cfg, echo = load_config(raw, seed=seed, backward_bloat=backward_bloat)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    dump_fh = None
    if dump_prune:
        files["prune_dump"] = str(out / "prune.jsonl")
        dump_fh = open(files["prune_dump"], "w")
    start = time.perf_counter()
    try:
        tube = run(system, cfg, progress=progress, dump=dump_fh)
    finally:
        if dump_fh is not None:
            dump_fh.close()
    report = build_report(system, echo, tube, time.perf_counter() - start)
    files["segments"] = str(out / "segments.csv")
    files["discrete"] = str(out / "discrete.csv")
    write_segments_csv(report, Path(files["segments"]))
    write_discrete_csv(report, Path(files["discrete"]))
    if plot is not None:
        files["plot"] = str(emit_plot_data(report, plot, stride, out / "plot.csv"))
    report.files = files
    files["report"] = str(out / "report.json")
    with open(files["report"], "w") as fh:
        json.dump(report.to_json(), fh, indent=1)
    return report


def _parse_dims(text: str):
    try:
        i, j = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected two comma-separated indices such as 0,1") from None
    return i, j


def _job(args: tuple) -> tuple[int, str]:
    path, out, opts = args
    try:
        report = run_benchmark(path, out, **opts)
    except ConfigError as exc:
        return EXIT_CONFIG, f"{path}: config error: {exc}"
    except BadDimensionPair as exc:
        return EXIT_CONFIG, f"{path}: {exc}"
    line = (f"{report.system}: {report.status} segments={len(report.segments)} "
            f"TV={report.total_volume:.6g} AV={report.avg_volume:.3g} "
            f"FTLE<={report.ftle_upper if report.ftle_upper is None else format(report.ftle_upper, '.4g')} "
            f"time={report.wall_time:.1f}s -> {out}")
    if not report.complete:
        line += f" ({report.reason})"
    return (EXIT_OK if report.complete else EXIT_PARTIAL), line


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clrt", description="Continuous ellipsoidal reachtubes for nonlinear ODEs.")
    p.add_argument("--config", action="append", default=[], metavar="PATH",
                   help="JSON run configuration (repeatable)")
    p.add_argument("--benchmark", action="append", default=[], metavar="NAME",
                   help="packaged benchmark config (repeatable); see --list")
    p.add_argument("--list", action="store_true", help="list packaged benchmarks and systems, then exit")
    p.add_argument("--out", default="clrt-out", metavar="DIR", help="output directory")
    p.add_argument("--plot", type=_parse_dims, metavar="I,J", help="emit projected ellipses onto dims I,J")
    p.add_argument("--stride", type=int, default=20, metavar="N", help="plot every N-th segment")
    p.add_argument("--dump-prune", action="store_true", help="write branch-and-prune boxes as JSONL")
    p.add_argument("--seed", type=int, default=None, metavar="N", help="seed of the speed estimator")
    p.add_argument("--backward-bloat", action="store_true", help="also certify the backward speed bound")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="run configs in N processes")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.list:
        print("benchmarks:", ", ".join(benchmark_names()))
        print("systems:", ", ".join(builtin_names()))
        return EXIT_OK
    try:
        paths = list(args.config) + [str(benchmark_config_path(b)) for b in args.benchmark]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not paths:
        print("nothing to run: give --config PATH or --benchmark NAME", file=sys.stderr)
        return EXIT_CONFIG
    if args.stride < 1:
        print("--stride must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    opts = {"plot": args.plot, "stride": args.stride, "dump_prune": args.dump_prune,
            "seed": args.seed, "backward_bloat": args.backward_bloat}
    out = Path(args.out)
    if len(paths) == 1:
        jobs = [(paths[0], out, opts)]
    else:
        jobs = [(p, out / Path(p).stem, opts) for p in paths]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    for code, line in results:
        print(line, file=sys.stderr if code == EXIT_CONFIG else sys.stdout)
    codes = [c for c, _ in results]
    if EXIT_CONFIG in codes:
        return EXIT_CONFIG
    if EXIT_PARTIAL in codes:
        return EXIT_PARTIAL
    return EXIT_OK
