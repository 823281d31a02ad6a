"""``gwlab``: reproducible experiments with file outputs.

Exit status: 0 on success (soft statistical checks only warn), 1 when a hard
check fails, 2 on invalid input such as an unparsable offspring spec.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .hausdorff import c_xi_pairing, cover_pairs, min_cover_cost
from .identity_harness import run_battery, sizebias_law_enumerate, MAX_ENUM_SUPPORT
from .offspring import FiniteOffspring, OffspringDistribution, OffspringSpecError, make_offspring
from .sampler import DEFAULT_CAP, RngStream, sample_forest, sample_spine_y, sample_w, split_forest
from .spine_density import bound_check, bound_constants, density_ratios, sample_x1, thin_ray_identity, xy_from_y
from .tail_gauge import EmpiricalTail, Gauge, analytic_tail, consequence_check, doubling_diagnostic

log = logging.getLogger("gwlab")

CHUNK = 10_000
HARD_Z = 5.0
SOFT_Z = 3.0
SUBCOMMANDS = ("tail", "spine", "verify", "cover", "bounds", "thin")


# ---------------------------------------------------------------------------
# configuration


def _grid(text: str) -> tuple[float, ...]:
    """``"a:b:n"`` (inclusive linspace) or a comma list."""
    text = text.strip()
    if not text:
        return ()
    if ":" in text:
        a, b, n = text.split(":")
        return tuple(float(v) for v in np.linspace(float(a), float(b), int(n)))
    return tuple(float(v) for v in text.split(","))


@dataclass(frozen=True)
class ExperimentConfig:
    offspring: str = "0:0.25,2:0.75"
    depth: int = 12
    spine_depth: int = 64
    subtree_depth: int = 12
    reps: int = 10_000
    tail_depth: int = 14
    tail_reps: int = 10_000
    seed: int = 0
    x_grid: str = "0:8:33"
    r_grid: int = 50
    min_gen: int = 2
    n0: int = 2
    tail: str = "empirical"
    window: float = 0.5
    output_dir: str = "out"
    format: str = "csv"
    cap: int = DEFAULT_CAP
    workers: int = 1

    # fields that do not influence any computed number
    _NON_SEMANTIC = ("output_dir", "workers")

    def validate(self, m: float | None = None) -> None:
        for name in ("depth", "spine_depth", "subtree_depth", "tail_depth"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be nonnegative")
            # expected population of one tree must fit under the cap
            if m is not None and name != "spine_depth" and v * math.log(max(m, 1.0)) > math.log(self.cap):
                raise ValueError(f"{name} = {v}: expected population m^{v} exceeds the cap {self.cap}")
        if self.reps < 1 or self.tail_reps < 1:
            raise ValueError("replica counts must be positive")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        if self.tail not in ("empirical", "analytic"):
            raise ValueError("tail must be empirical or analytic")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kw[key] = {"int": int, "float": float}.get(str(types[key]), str)(val)
        return cls(**kw)

    def config_hash(self) -> str:
        sem = "\n".join(
            f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self) if f.name not in self._NON_SEMANTIC
        )
        return hashlib.sha256(sem.encode()).hexdigest()[:16]

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def parse_offspring_spec(s: str) -> OffspringDistribution:
    """Delegates to :func:`make_offspring`; errors carry the offending token."""
    return make_offspring(s)


# ---------------------------------------------------------------------------
# replica fan-out


def _chunks(reps: int) -> list[tuple[int, int]]:
    return [(i, min(CHUNK, reps - i * CHUNK)) for i in range((reps + CHUNK - 1) // CHUNK)]


def _w_chunk(args):
    spec, depth, count, seed, stream, cap = args
    return sample_w(make_offspring(spec), depth, count, RngStream(seed, stream), cap)


def _y_chunk(args):
    spec, depth, sub, count, seed, stream, cap = args
    return sample_spine_y(make_offspring(spec), depth, sub, count, RngStream(seed, stream), cap=cap).y


def _fan_out(fn, jobs, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


# stream ids per subcommand keep experiments independent under one seed
_STREAM = {"w": 1, "y": 2, "forest": 3, "verify": 4, "x1": 5, "w_eq": 6, "thin": 7}


def draw_w(cfg: ExperimentConfig, d: OffspringDistribution, depth: int, reps: int) -> np.ndarray:
    base = _STREAM["w"] * 1_000_000
    jobs = [(d.spec, depth, n, cfg.seed, base + i, cfg.cap) for i, n in _chunks(reps)]
    return np.concatenate(_fan_out(_w_chunk, jobs, cfg.workers))


def draw_y(cfg: ExperimentConfig, d: OffspringDistribution) -> np.ndarray:
    base = _STREAM["y"] * 1_000_000
    jobs = [(d.spec, cfg.spine_depth, cfg.subtree_depth, n, cfg.seed, base + i, cfg.cap) for i, n in _chunks(cfg.reps)]
    return np.concatenate(_fan_out(_y_chunk, jobs, cfg.workers))


# ---------------------------------------------------------------------------
# output helpers


class Run:
    def __init__(self, name: str, cfg: ExperimentConfig, d: OffspringDistribution):
        self.name, self.cfg, self.d = name, cfg, d
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.hard_failures: list[str] = []
        self.warnings: list[str] = []
        self.files: list[Path] = []

    def meta(self, **extra) -> dict:
        d = self.d
        base = {
            "subcommand": self.name,
            "config_hash": self.cfg.config_hash(),
            "offspring": d.spec,
            "m": d.m,
            "q": d.q,
            "hyp": "ok" if d.hyp_ok else "fails",
            "depth": self.cfg.depth,
            "spine_depth": self.cfg.spine_depth,
            "subtree_depth": self.cfg.subtree_depth,
            "reps": self.cfg.reps,
            "seed": self.cfg.seed,
            "w_depth": self.cfg.tail_depth,
            "version": __version__,
        }
        base.update(extra)
        return base

    def write_csv(self, stem: str, body: str, **extra) -> None:
        header = "# " + " ".join(f"{k}={v}" for k, v in self.meta(**extra).items()) + "\n"
        path = self.out / f"{self.name}_{stem}.csv"
        path.write_text(header + body)
        self.files.append(path)

    def write_json(self, stem: str, payload: dict, **extra) -> None:
        doc = {"meta": {**self.meta(**extra), "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}, **payload}
        path = self.out / f"{self.name}_{stem}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.files.append(path)

    def table(self, stem: str, header: list[str], rows: list[list], **extra) -> None:
        if self.cfg.format == "json":
            self.write_json(stem, {"columns": header, "rows": rows}, **extra)
        else:
            body = ",".join(header) + "\n" + "".join(",".join(_cell(v) for v in r) + "\n" for r in rows)
            self.write_csv(stem, body, **extra)

    def hard(self, msg: str) -> None:
        self.hard_failures.append(msg)
        log.error(msg)

    def soft(self, msg: str) -> None:
        self.warnings.append(msg)
        log.warning(msg)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(type(o))


def _finite(v: float):
    return v if math.isfinite(v) else str(v)


def build_tail(cfg: ExperimentConfig, d: OffspringDistribution, depth: int | None = None, reps: int | None = None):
    """W-tail for a gauge; the W sample uses ``tail_depth``/``tail_reps`` unless overridden."""
    if cfg.tail == "analytic":
        return analytic_tail(d), None
    depth = cfg.tail_depth if depth is None else depth
    w = draw_w(cfg, d, depth, cfg.tail_reps if reps is None else reps)
    return EmpiricalTail(w, depth), w


# ---------------------------------------------------------------------------
# subcommands


def cmd_tail(run: Run) -> None:
    # the W sample is this subcommand's main output, so it follows --depth/--reps
    cfg, d = run.cfg, run.d
    tail, w = build_tail(cfg, d, cfg.depth, cfg.reps)
    xs = _grid(cfg.x_grid)
    rows = []
    for x in xs:
        inv = float(tail.inverse(math.log(x))) if x > 0 else None
        rows.append([x, float(tail.survival(x)), _finite(float(tail.F(x))), inv])
    run.table("tail", ["x", "survival", "F", "Finv_at_logx"], rows, **tail.metadata())
    gauge = Gauge(d.m, tail)
    rs = np.geomspace(1e-12, math.exp(-1) * (1 - 1e-9), cfg.r_grid)
    run.table("gauge", ["r", "g"], [[float(r), gauge(float(r))] for r in rs], **tail.metadata())
    dx = [x for x in xs if x > 0] or [1.0]
    rep = doubling_diagnostic(tail, dx)
    cons = consequence_check(tail, rep.a_hat) if math.isfinite(rep.a_hat) else None
    s0 = float(tail.survival(0.0))
    summary = {
        "survival_at_0": s0,
        "one_minus_q": 1 - d.q,
        "F_at_0": _finite(float(tail.F(0.0))),
        "doubling": {
            "sup_ratio": _finite(rep.sup_ratio),
            "a_hat": _finite(rep.a_hat),
            "argmax": _finite(rep.argmax),
            "excluded": [[r.x, r.status] for r in rep.excluded],
        },
        "consequence_check": None
        if cons is None
        else {"checked": cons.checked, "violations": len(cons.violations), "skipped": cons.skipped},
    }
    if w is not None:
        n = w.size
        se = math.sqrt(max(s0 * (1 - s0), 1e-300) / n)
        if abs(s0 - (1 - d.q)) > SOFT_Z * se and d.hyp_ok:
            run.soft(f"S(0) = {s0:.5f} differs from 1-q = {1 - d.q:.5f} by more than 3 standard errors")
        summary["w_mean"] = float(w.mean())
        summary["w_mean_se"] = float(w.std(ddof=1) / math.sqrt(n)) if n > 1 else None
    if cons is not None and cons.violations:
        run.soft(f"consequence check: {len(cons.violations)} of {cons.checked} points violate the bound")
    for g_n in range(2, 21):
        if abs(gauge.at_generation(g_n) * d.m**g_n - float(tail.inverse(math.log(g_n)))) > 1e-12 * max(
            1.0, float(tail.inverse(math.log(g_n)))
        ):
            run.hard(f"gauge identity fails at n = {g_n}")
    run.write_json("summary", summary, **tail.metadata())


def _gauge_for(run: Run):
    tail, _ = build_tail(run.cfg, run.d)
    return Gauge(run.d.m, tail), tail


def _traces(run: Run, gauge: Gauge):
    cfg, d = run.cfg, run.d
    y = draw_y(cfg, d)
    meta = {"spine_depth": cfg.spine_depth, "subtree_depth": cfg.subtree_depth, "reps": cfg.reps}
    return xy_from_y(y, d.m, gauge, (cfg.subtree_depth,) * cfg.spine_depth, meta)


def cmd_spine(run: Run) -> None:
    cfg, d = run.cfg, run.d
    gauge, tail = _gauge_for(run)
    trace = _traces(run, gauge)
    stats = density_ratios(trace, window=(cfg.window, 1.0))
    if cfg.format == "json":
        run.write_json("trace", {"replica": 0, "csv": trace.to_csv(0)}, **tail.metadata())
    else:
        run.write_csv("trace", trace.to_csv(0).split("\n", 1)[1], **tail.metadata())
    run.table("window_max", ["replica", "window_max"], [[i, float(v)] for i, v in enumerate(stats.window_max)], **tail.metadata())
    x = trace.x_raw
    if np.any(x < trace.y - 1e-12) or np.any(x[:, :-1] < trace.y[:, 1:] / d.m - 1e-12):
        run.hard("X_n >= Y_n or X_n >= Y_{n+1}/m violated")
    summary = {
        "kappa_hat": stats.kappa_hat,
        "c_xi_hat": stats.c_xi_hat,
        "window": list(stats.window),
        "quantiles": {str(k): v for k, v in stats.quantiles.items()},
        "mean_window_max": stats.mean,
        "frac_window_max_ge_1": float(np.mean(stats.window_max >= 1)),
        "gauge_zero_at": trace.meta.get("gauge_zero_at", []),
        "dyadic_medians": {f"{a}-{b}": float(np.median(v)) for (a, b), v in stats.dyadic_max.items()},
        "note": "windowed maxima over [w*N, N] stand in for the limsup; kappa_hat is their cross-replica median",
    }
    if summary["frac_window_max_ge_1"] < 0.95:
        run.soft(f"only {summary['frac_window_max_ge_1']:.3f} of replicas reach R_n >= 1 in the window")
    run.write_json("summary", summary, **tail.metadata())


def cmd_verify(run: Run) -> None:
    cfg, d = run.cfg, run.d
    res = run_battery(d, cfg.reps, RngStream(cfg.seed, _STREAM["verify"]))
    payload = res.to_json()
    for r in res.results:
        if abs(r.z) > HARD_Z:
            run.hard(f"{r.label}: |z| = {abs(r.z):.2f} > {HARD_Z}")
        elif not r.passed(SOFT_Z):
            run.soft(f"{r.label}: outside 3 standard errors (z = {r.z:.2f})")
    if isinstance(d, FiniteOffspring) and d.max_support <= MAX_ENUM_SUPPORT:
        enum = {}
        for n in (1, 2):
            e = sizebias_law_enumerate(d, n)
            enum[str(n)] = {"tv": str(e.tv), "tv_float": e.tv_float, "shapes": e.n_shapes}
            if e.tv_float > 1e-12:
                run.hard(f"size-bias enumeration at n = {n}: TV = {e.tv_float}")
        payload["enumeration"] = enum
    run.write_json("battery", payload)
    rows = [[r.label, r.lhs, r.lhs_se, r.rhs, r.rhs_se, r.z, r.verdict()] for r in res.results]
    if cfg.format == "csv":
        run.table("battery", ["spec", "lhs", "lhs_se", "rhs", "rhs_se", "z", "verdict"], rows)


def cmd_cover(run: Run) -> None:
    cfg, d = run.cfg, run.d
    gauge, tail = _gauge_for(run)
    forest = sample_forest(d, cfg.depth, cfg.reps, RngStream(cfg.seed, _STREAM["forest"]), cfg.cap)
    costs, ws = cover_pairs(forest, d.m, gauge, cfg.min_gen)
    rows = [[i, float(c), float(w)] for i, (c, w) in enumerate(zip(costs, ws))]
    run.table("costs", ["tree", "cover_cost", "W_hat"], rows, min_gen=cfg.min_gen, alive_proxy="alive_at_depth")
    # one fully reconstructed cover with its self-check
    first = next((i for i, w in enumerate(ws) if w > 0), 0)
    sol = None
    try:
        sol = min_cover_cost(split_forest(forest)[first], gauge, cfg.min_gen, self_check=True)
    except AssertionError as exc:
        run.hard(str(exc))
    payload = {"mean_cost": float(costs.mean()), "mean_W": float(ws.mean()), "example_tree": first}
    if sol is not None:
        payload["example_cover"] = sol.to_json()
    if d.hyp_ok:
        try:
            trace = _traces(run, gauge)
            stats = density_ratios(trace, window=(cfg.window, 1.0))
            pair = c_xi_pairing(stats.kappa_hat, costs, ws)
            payload["pairing"] = pair.to_json()
            payload["kappa_hat"] = stats.kappa_hat
        except ValueError as exc:
            run.soft(f"pairing skipped: {exc}")
    run.write_json("summary", payload, min_gen=cfg.min_gen, **tail.metadata())
    print(f"mean cover cost {payload['mean_cost']!r}")


def cmd_bounds(run: Run) -> None:
    cfg, d = run.cfg, run.d
    x1 = sample_x1(d, cfg.depth, cfg.reps, RngStream(cfg.seed, _STREAM["x1"]), cap=cfg.cap)
    w = sample_w(d, cfg.depth, cfg.reps, RngStream(cfg.seed, _STREAM["w_eq"]), cfg.cap)
    tail = EmpiricalTail(w, cfg.depth)
    xs = _grid(cfg.x_grid)
    rep = bound_check(d, tail, x1, w, xs, bound_constants(d))
    header = ["x", "P_X1_gt_x", "se1", "C0_expF", "lower_ok", "P_X1_gt_mx", "se2", "E_W_1W_gt_x", "se_w", "z", "equal_ok", "C1_expF2", "upper_ok"]
    rows = [[getattr(r, f.name) for f in dataclasses.fields(r)] for r in rep.rows]
    run.table("bounds", header, rows, C0=rep.constants.C0, C1=rep.constants.C1, w_depth=cfg.depth)
    for r in rep.rows:
        if not (r.ok_pass and r.equal_pass and r.rough_pass):
            run.soft(f"bound check outside 3 standard errors at x = {r.x}")
    run.write_json("summary", {"passed": rep.passed, "C0": rep.constants.C0, "C1": rep.constants.C1}, w_depth=cfg.depth)


def cmd_thin(run: Run) -> None:
    cfg, d = run.cfg, run.d
    tail, _ = build_tail(cfg, d)
    rep = thin_ray_identity(d, cfg.n0, cfg.depth, cfg.reps, RngStream(cfg.seed, _STREAM["thin"]), tail, extra_depth=cfg.subtree_depth, cap=cfg.cap)
    if abs(rep.z) > HARD_Z:
        run.hard(f"thin-ray identity: |z| = {abs(rep.z):.2f}")
    elif abs(rep.z) > SOFT_Z:
        run.soft(f"thin-ray identity: z = {rep.z:.2f}")
    for n, freq, se, bound, ok in rep.level_checks:
        if not ok:
            run.soft(f"level {n}: P(Y < threshold) = {freq:.4f} above {bound:.4f}")
    payload = {
        "n0": rep.n0,
        "N": rep.N,
        "lhs": rep.lhs,
        "lhs_se": rep.lhs_se,
        "rhs": rep.rhs,
        "rhs_se": rep.rhs_se,
        "z": rep.z,
        "degenerate": rep.degenerate,
        "thresholds": list(rep.thresholds),
        "level_checks": [list(c) for c in rep.level_checks],
        **rep.meta,
    }
    run.write_json("report", payload)


COMMANDS = {
    "tail": cmd_tail,
    "spine": cmd_spine,
    "verify": cmd_verify,
    "cover": cmd_cover,
    "bounds": cmd_bounds,
    "thin": cmd_thin,
}


# ---------------------------------------------------------------------------
# argument parsing


_FLAGS = {
    "offspring": str,
    "depth": int,
    "spine_depth": int,
    "subtree_depth": int,
    "reps": int,
    "tail_depth": int,
    "tail_reps": int,
    "seed": int,
    "x_grid": str,
    "r_grid": int,
    "min_gen": int,
    "n0": int,
    "tail": str,
    "window": float,
    "output_dir": str,
    "format": str,
    "cap": int,
    "workers": int,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gwlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key=value file; flags override it")
        sp.add_argument("-v", "--verbose", action="store_true")
        for key, typ in _FLAGS.items():
            flag = "--" + key.replace("_", "-")
            if key == "format":
                sp.add_argument(flag, choices=("csv", "json"), default=None)
            elif key == "tail":
                sp.add_argument(flag, choices=("empirical", "analytic"), default=None)
            else:
                sp.add_argument(flag, type=typ, default=None)
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = ExperimentConfig.from_text(Path(args.config).read_text())
    overrides = {k: getattr(args, k) for k in _FLAGS if getattr(args, k) is not None}
    cfg = cfg.replace(**overrides)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        print(f"gwlab: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        d = parse_offspring_spec(cfg.offspring)
    except OffspringSpecError as exc:
        print(f"gwlab: bad offspring spec: {exc} (token {exc.token!r} at position {exc.position})", file=sys.stderr)
        return 2
    if not d.hyp_ok:
        log.warning("%s", d.status)
    try:
        cfg.validate(d.m)
    except ValueError as exc:
        print(f"gwlab: configuration error: {exc}", file=sys.stderr)
        return 2
    run = Run(args.command, cfg, d)
    run.write_json("config", {"config": cfg.to_text()})
    try:
        COMMANDS[args.command](run)
    except ValueError as exc:
        print(f"gwlab {args.command}: {exc}", file=sys.stderr)
        return 2
    for f in run.files:
        log.info("wrote %s", f)
    if run.hard_failures:
        print(f"gwlab {args.command}: {len(run.hard_failures)} hard check(s) failed", file=sys.stderr)
        return 1
    if run.warnings:
        print(f"gwlab {args.command}: {len(run.warnings)} warning(s)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
