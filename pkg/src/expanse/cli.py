"""Config-driven experiment runner: ``expanse <command> --config run.json``.

The numerical modules are imported lazily so that ``--threads`` can size the
worker pool before the JIT runtime starts.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

COMMANDS = ("ball-mass", "scan", "entropy", "bk-curve", "cover", "regularize-demo", "tube-check")
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


@dataclass
class ExperimentConfig:
    command: str = "scan"
    flow: dict = field(default_factory=lambda: {"family": "suspension", "alphabet_size": 2})
    measure: dict = field(default_factory=lambda: {"kind": "bernoulli-suspension",
                                                   "p": [0.5, 0.5]})
    seed: int = 0
    out: str = "out"
    N: int = 2000
    step: float = 0.05
    q: int = 4
    eps_grid: list = field(default_factory=lambda: [0.2])
    alpha: Optional[float] = None
    t_grid: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 4.0])
    n_grid: list = field(default_factory=lambda: list(range(1, 9)))
    side: str = "forward"
    kind: str = "generalized"
    center_count: int = 8
    center: Optional[dict] = None
    delta: float = 0.1
    L: float = 1.0
    horizon: float = 5.0
    members: int = 32
    count: int = 10
    map_time: float = 1.0
    rho_min: float = 0.1
    r2_min: float = 0.9
    min_count: int = 3

    @classmethod
    def from_dict(cls, data: dict) -> tuple["ExperimentConfig", list]:
        """Build a config from JSON data; unknown keys become violations."""
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = [Violation("error", k, "unknown field") for k in data if k not in names]
        return cls(**{k: v for k, v in data.items() if k in names}), unknown

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Violation:
    level: str
    field: str
    message: str

    def __str__(self):
        return f"{self.level}: {self.field}: {self.message}"


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _flow_diameter(flow: dict) -> Optional[float]:
    fam = flow.get("family") if isinstance(flow, dict) else None
    return {"torus": math.sqrt(0.5), "suspension": 1.0}.get(fam)


def validate(cfg: ExperimentConfig) -> list:
    """All violations of the run preconditions (``error`` level blocks a run)."""
    out = []

    def err(name, msg):
        out.append(Violation("error", name, msg))

    if cfg.command not in COMMANDS:
        err("command", f"must be one of {', '.join(COMMANDS)}")
    diameter = _flow_diameter(cfg.flow)
    if diameter is None:
        err("flow", "family must be 'torus' or 'suspension'")
    if not _is_int(cfg.seed) or not 0 <= cfg.seed < 2 ** 64:
        err("seed", "must be an explicit integer in [0, 2^64)")
    if not _is_int(cfg.N) or cfg.N < 1:
        err("N", "must be an integer >= 1")
    if not _is_num(cfg.step) or cfg.step <= 0:
        err("step", "must be positive")
    if not _is_int(cfg.q) or cfg.q < 1:
        err("q", "must be an integer >= 1")
    for name in ("eps_grid", "t_grid", "n_grid"):
        grid = getattr(cfg, name)
        if not isinstance(grid, list) or not grid or not all(_is_num(v) for v in grid):
            err(name, "must be a nonempty list of numbers")
    if isinstance(cfg.eps_grid, list) and all(_is_num(v) for v in cfg.eps_grid):
        if any(v <= 0 for v in cfg.eps_grid):
            err("eps_grid", "radii must be positive")
        elif diameter is not None and any(v > diameter for v in cfg.eps_grid):
            out.append(Violation("warning", "eps_grid",
                                 f"radius above the diameter {diameter:.6g}; balls are the whole space"))
    if isinstance(cfg.t_grid, list) and any(_is_num(v) and v < 0 for v in cfg.t_grid):
        err("t_grid", "horizons must be nonnegative")
    if isinstance(cfg.n_grid, list) and cfg.n_grid:
        ok = all(_is_int(v) and v >= 0 for v in cfg.n_grid)
        if not ok or any(b <= a for a, b in zip(cfg.n_grid, cfg.n_grid[1:])):
            err("n_grid", "must be increasing nonnegative integers")
        elif cfg.command == "entropy" and len(cfg.n_grid) < 2:
            err("n_grid", "needs at least two entries for a rate fit")
    if cfg.alpha is not None and (not _is_num(cfg.alpha) or not 0 < cfg.alpha < 1):
        err("alpha", "must lie in (0, 1) or be null (alpha = eps)")
    if cfg.alpha is None and isinstance(cfg.eps_grid, list) and cfg.command in (
            "ball-mass", "scan", "bk-curve") and any(_is_num(v) and v >= 1 for v in cfg.eps_grid):
        err("alpha", "alpha = eps needs every eps below 1")
    if cfg.side not in ("forward", "two-sided"):
        err("side", "must be 'forward' or 'two-sided'")
    if cfg.kind not in ("classic", "generalized"):
        err("kind", "must be 'classic' or 'generalized'")
    for name in ("center_count", "members", "count", "min_count"):
        v = getattr(cfg, name)
        if not _is_int(v) or v < 1:
            err(name, "must be an integer >= 1")
    if not _is_num(cfg.delta) or not 0 < cfg.delta < 1:
        err("delta", "must lie in (0, 1)")
    for name in ("L", "horizon", "map_time"):
        v = getattr(cfg, name)
        if not _is_num(v) or v <= 0:
            err(name, "must be positive")
    if _is_num(cfg.L) and cfg.command == "cover" and cfg.L < 1:
        err("L", "block length must be at least 1")
    if not isinstance(cfg.measure, dict) or "kind" not in cfg.measure:
        err("measure", "must be an object with a 'kind'")
    elif diameter is not None:
        want = {"lebesgue-torus": "torus", "bernoulli-suspension": "suspension"}
        fam = want.get(cfg.measure["kind"])
        if fam is not None and fam != cfg.flow.get("family"):
            err("measure", f"{cfg.measure['kind']} needs the {fam} flow")
    if not isinstance(cfg.out, str) or not cfg.out:
        err("out", "must be a nonempty path")
    return out


# ------------------------------------------------------------------ helpers


def _build_flow(desc: dict):
    from .flows import FlowSystem

    if desc["family"] == "torus":
        return FlowSystem.torus(tuple(desc["direction"])) if "direction" in desc \
            else FlowSystem.torus()
    return FlowSystem.suspension(int(desc.get("alphabet_size", 2)))


def _build_point(flow, desc: dict):
    from .flows import BernoulliSymbols, PeriodicSymbols, SuspensionPoint, TorusPoint

    if flow.family == "torus":
        return TorusPoint(float(desc["u"]), float(desc["v"]))
    if "word" in desc:
        src = PeriodicSymbols(tuple(desc["word"]))
    else:
        probs = desc.get("p", [1.0 / flow.alphabet_size] * flow.alphabet_size)
        src = BernoulliSymbols(int(desc["seed"]), tuple(probs))
    return SuspensionPoint(src, int(desc.get("offset", 0)), float(desc.get("roof", 0.0)))


def _build_measure(flow, cfg: ExperimentConfig):
    from .measures import sample_measure

    desc = dict(cfg.measure)
    if desc["kind"] == "dirac":
        desc["point"] = _build_point(flow, desc["point"])
    elif desc["kind"] == "custom":
        desc["points"] = [_build_point(flow, p) for p in desc["points"]]
    return sample_measure(flow, desc, cfg.N, cfg.seed)


def _center(flow, mu, cfg: ExperimentConfig):
    from .measures import draw_centers

    if cfg.center is not None:
        return _build_point(flow, cfg.center), None
    c = int(draw_centers(mu, 1, cfg.seed)[0])
    return mu.point(c), c


def _alpha(cfg, eps):
    return cfg.alpha if cfg.alpha is not None else eps


def _writer(path: Path, header):
    fh = open(path, "w", newline="")
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(header)
    return fh, wr


class RunFailure(RuntimeError):
    def __init__(self, message: str, record: Path):
        super().__init__(message)
        self.record = record


# ----------------------------------------------------------------- commands


def _cmd_ball_mass(cfg, out: Path) -> list:
    from .measures import mass_profile

    flow = _build_flow(cfg.flow)
    mu = _build_measure(flow, cfg)
    x, cid = _center(flow, mu, cfg)
    path = out / "ball_mass.csv"
    fh, wr = _writer(path, ["epsilon", "alpha", "t", "mass", "stderr", "count"])
    with fh:
        for eps in cfg.eps_grid:
            prof = mass_profile(mu, flow, x, eps, _alpha(cfg, eps), cfg.t_grid, cfg.step, cfg.q,
                                cfg.side, cfg.kind, exclude=cid)
            for t, m, s, c in zip(prof.t, prof.mass, prof.stderr, prof.count):
                wr.writerow([repr(float(eps)), repr(float(_alpha(cfg, eps))), repr(float(t)),
                             repr(float(m)), repr(float(s)), int(c)])
    return [path]


def _cmd_scan(cfg, out: Path) -> list:
    from .measures import expansivity_scan

    flow = _build_flow(cfg.flow)
    mu = _build_measure(flow, cfg)
    rep = expansivity_scan(flow, mu, cfg.eps_grid, cfg.t_grid, cfg.center_count, cfg.step,
                           cfg.q, seed=cfg.seed, side=cfg.side, kind=cfg.kind,
                           rho_min=cfg.rho_min, r2_min=cfg.r2_min, min_count=cfg.min_count)
    paths = [out / "scan.csv", out / "scan_summary.csv"]
    rep.write_csv(*paths)
    return paths


def _cmd_entropy(cfg, out: Path) -> list:
    from .entropy import katok_entropy

    flow = _build_flow(cfg.flow)
    mu = _build_measure(flow, cfg)
    est = katok_entropy(flow, mu, cfg.delta, cfg.eps_grid, cfg.n_grid, seed=cfg.seed,
                        step=cfg.map_time)
    paths = [out / "entropy.csv", out / "entropy_summary.csv"]
    est.write_csv(*paths)
    return paths


def _cmd_bk_curve(cfg, out: Path) -> list:
    from .entropy import brin_katok_rate

    flow = _build_flow(cfg.flow)
    mu = _build_measure(flow, cfg)
    curve_path, summary_path = out / "bk_curve.csv", out / "bk_summary.csv"
    fh, wr = _writer(curve_path, ["epsilon", "center_id", "t", "mass", "count", "censored"])
    sh, sw = _writer(summary_path, ["epsilon", "slope", "r2"])
    with fh, sh:
        for eps in cfg.eps_grid:
            bk = brin_katok_rate(flow, mu, eps, cfg.t_grid, cfg.step, cfg.q, cfg.center_count,
                                 cfg.seed, cfg.min_count)
            for cid, cur in zip(bk.centers, bk.curves):
                for t, m, c, cens in zip(cur.t, cur.mass, cur.count, cur.censored):
                    wr.writerow([repr(float(eps)), cid, repr(float(t)), repr(float(m)), int(c),
                                 int(cens)])
            sw.writerow([repr(float(eps)), repr(bk.rate), repr(bk.r2)])
    return [curve_path, summary_path]


def _cmd_cover(cfg, out: Path) -> list:
    from .entropy import ball_members, cover_generalized_ball

    flow = _build_flow(cfg.flow)
    mu = _build_measure(flow, cfg)
    x, _ = _center(flow, mu, cfg)
    paths = [out / "cover.csv", out / "cover_members.csv"]
    eps = cfg.eps_grid[0]
    members, witnesses = ball_members(flow, x, cfg.delta, cfg.horizon, eps, cfg.L, cfg.members,
                                      cfg.step, cfg.q, cfg.seed)
    res = cover_generalized_ball(flow, x, cfg.delta, cfg.horizon, eps, cfg.L, members,
                                 cfg.step, cfg.q, witnesses=witnesses)
    res.write_csv(paths[0])
    bad = {i for i, _ in res.failures}
    fh, wr = _writer(paths[1], ["member", "signature", "verified"])
    with fh:
        for i, s in enumerate(res.member_signatures):
            wr.writerow([i, str(s), int(i not in bad)])
    if res.failures:
        rec = out / "cover_failures.csv"
        fh, wr = _writer(rec, ["member", "signature"])
        with fh:
            for i, s in res.failures:
                wr.writerow([i, str(s)])
        raise RunFailure(f"{len(res.failures)} cover members failed verification", rec)
    return paths


def _cmd_regularize_demo(cfg, out: Path) -> list:
    from .flows import substream
    from .reparam import random_block_warp, regularize, slope_class

    rng = substream(cfg.seed, "warps")
    alpha = cfg.alpha if cfg.alpha is not None else 0.1
    warp_path, summary_path = out / "regularize.csv", out / "regularize_summary.csv"
    fh, wr = _writer(warp_path, ["case", "knot", "value"])
    sh, sw = _writer(summary_path, ["case", "input_slope_class", "output_slope_class", "ok"])
    with fh, sh:
        for case in range(cfg.count):
            h = random_block_warp(rng, cfg.L, alpha, cfg.horizon)
            g = regularize(h, cfg.L, alpha, cfg.horizon)
            for k, v in zip(g.knots, g.values):
                wr.writerow([case, repr(float(k)), repr(float(v))])
            sc = slope_class(g)
            sw.writerow([case, repr(slope_class(h)), repr(sc), int(sc <= alpha)])
    return [warp_path, summary_path]


def _cmd_tube_check(cfg, out: Path) -> list:
    from .measures import tube_inclusion_check

    flow = _build_flow(cfg.flow)
    mu = _build_measure(flow, cfg)
    x, _ = _center(flow, mu, cfg)
    chk = tube_inclusion_check(flow, x, cfg.delta, cfg.horizon, cfg.step)
    path = out / "tube.csv"
    fh, wr = _writer(path, ["offset", "inside", "first_exit"])
    with fh:
        for s, ok, fe in zip(chk.offsets, chk.inside, chk.first_exit):
            wr.writerow([repr(float(s)), int(ok), repr(float(fe))])
    return [path]


_HANDLERS = {"ball-mass": _cmd_ball_mass, "scan": _cmd_scan, "entropy": _cmd_entropy,
             "bk-curve": _cmd_bk_curve, "cover": _cmd_cover,
             "regularize-demo": _cmd_regularize_demo, "tube-check": _cmd_tube_check}


# ---------------------------------------------------------------------- run


def _versions() -> dict:
    import numba
    import numpy

    from importlib.metadata import PackageNotFoundError, version
    try:
        pkg = version("artifact")
    except PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": numpy.__version__,
            "numba": numba.__version__, "expanse": pkg}


def run(cfg: ExperimentConfig, stderr=None) -> int:
    """Execute ``cfg`` and write its outputs; return the exit status."""
    stderr = stderr or sys.stderr
    problems = validate(cfg)
    for v in problems:
        print(v, file=stderr)
    if any(v.level == "error" for v in problems):
        return EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    status, files, failure = EXIT_OK, [], None
    try:
        files = _HANDLERS[cfg.command](cfg, out)
    except RunFailure as exc:
        status, failure = EXIT_RUNTIME, {"message": str(exc), "record": str(exc.record)}
        print(f"runtime failure: {exc} (see {exc.record})", file=stderr)
    except (ValueError, ArithmeticError, TypeError, KeyError) as exc:
        status, failure = EXIT_RUNTIME, {"message": f"{type(exc).__name__}: {exc}"}
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=stderr)
    import numba

    manifest = {"config": cfg.to_dict(), "seeds": {"root": cfg.seed,
                                                    "substreams": ["measure", "centers",
                                                                   "probes", "members", "warps"]},
                "versions": _versions(), "threads": numba.get_num_threads(),
                "wall_time_s": time.perf_counter() - start, "exit_status": status,
                "outputs": [p.name for p in files], "failure": failure}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return status


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="expanse", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment configuration")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="root seed (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker threads for the numerical kernels")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: threads: must be at least 1", file=sys.stderr)
            return EXIT_CONFIG
        os.environ["NUMBA_NUM_THREADS"] = str(args.threads)
    try:
        with open(args.config) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(data, dict):
        print("error: config: must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    cfg, unknown = ExperimentConfig.from_dict(data)
    named = data.get("config", data).get("command", args.command)
    if named != args.command:
        unknown.append(Violation("error", "command",
                                 f"config names {named!r}, command line {args.command!r}"))
    for v in unknown:
        print(v, file=sys.stderr)
    if unknown:
        return EXIT_CONFIG
    cfg.command = args.command
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        import numba

        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
