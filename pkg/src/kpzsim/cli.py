"""Command line entry point: ``kpzsim simulate | sheet | verify | coeffs``.

Configs are ``key = value`` files with optional ``[section]`` headers; a key
``k`` in section ``s`` is the same as ``s.k`` at top level.  A manifest written
by a previous run may be passed to ``--config`` to replay it.

Exit codes: 0 ok, 1 a check failed, 2 bad config, 3 runtime or window error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import verify
from .initial import IcSpec
from .lattice import WindowTooSmall
from .noise import derive_seed
from .scaling import FORMULA_VERSION, ScalingCoeffs, build_sheet, center, derive_coeffs, rescale_values, scale_factor

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SUITES = ("exact", "statistical", "all")

_TOP_KEYS = {"model", "q", "b_right", "z", "alpha", "epsilon", "t_macro", "replicas", "seed"}
_SECTION_KEYS = {
    "window": {"auto", "halfwidth"},
    "sheet": {"s", "y_grid", "x_grid"},
    "suite": {"checks", "inject"},
}
_IC_KEYS = {"kind", "y", "rho", "lambda", "lambda_prime", "M", "R", "drift_factor", "seed", "epsilon"}


class ConfigError(Exception):
    """A config problem; the message names the offending key."""


# ---------------------------------------------------------------------------
# config parsing


def read_config_text(text: str) -> dict[str, str]:
    """Flatten a sectioned ``key = value`` text into ``{"section.key": value}``."""
    parser = configparser.ConfigParser(interpolation=None, default_section="\0")
    parser.optionxform = str
    try:
        parser.read_string("[\0root]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None
    flat: dict[str, str] = {}
    for sec in parser.sections():
        for key, value in parser.items(sec):
            name = key if sec == "\0root" else f"{sec}.{key}"
            if name in flat:
                raise ConfigError(f"{name}: given twice")
            flat[name] = value.strip()
    return flat


def load_config(path: str | Path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            snap = json.loads(text)["config"]
        except (ValueError, KeyError):
            raise ConfigError(f"{path}: JSON config must be a manifest with a 'config' object") from None
        return {str(k): str(v) for k, v in snap.items()}
    return read_config_text(text)


def _number(flat: dict[str, str], key: str, conv: Callable[[str], Any], default: Any = None, required: bool = False):
    if key not in flat:
        if required:
            raise ConfigError(f"{key}: missing")
        return default
    try:
        return conv(flat[key])
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {flat[key]!r}") from None


def _fraction_float(text: str) -> float:
    """Accepts ``0.125`` as well as ``1/8``."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def parse_grid(text: str) -> np.ndarray:
    """``a:b:n`` for ``n`` evenly spaced points, or a comma separated list."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            count = int(n)
            if count < 1:
                raise ValueError("need at least one point")
            return np.linspace(_fraction_float(a), _fraction_float(b), count)
        return np.array([_fraction_float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    coeffs: ScalingCoeffs
    eps: float
    t: float
    replicas: int
    seed: int
    ic: IcSpec
    halfwidth: int
    s: float
    y_grid: np.ndarray
    x_grid: np.ndarray
    checks: tuple[str, ...]
    inject: str | None
    snapshot: dict[str, str]


def validate(flat: dict[str, str], overrides: dict[str, str]) -> RunConfig:
    """Check every key and build a :class:`RunConfig`; raises :class:`ConfigError`."""
    flat = {**flat, **overrides}
    for key in flat:
        if "." not in key:
            if key not in _TOP_KEYS:
                raise ConfigError(f"{key}: unknown key")
            continue
        sec, sub = key.split(".", 1)
        allowed = _IC_KEYS if sec == "ic" else _SECTION_KEYS.get(sec)
        if allowed is None:
            raise ConfigError(f"{key}: unknown section {sec!r}")
        if sub not in allowed:
            raise ConfigError(f"{key}: unknown key")

    model = flat.get("model", "").lower()
    if model not in ("asep", "s6v"):
        raise ConfigError(f"model: expected 'asep' or 's6v', got {flat.get('model')!r}")
    q = _number(flat, "q", _fraction_float, required=True)
    alpha = _number(flat, "alpha", _fraction_float, default=0.0 if model == "asep" else 1.0)
    b_right = _number(flat, "b_right", _fraction_float)
    z = _number(flat, "z", _fraction_float)
    if model == "asep" and (b_right is not None or z is not None):
        raise ConfigError("b_right/z: only meaningful for model = s6v")
    if model == "s6v" and (b_right is None) == (z is None):
        raise ConfigError("b_right|z: give exactly one for model = s6v")
    try:
        coeffs = derive_coeffs(model, q, alpha, b_right=b_right, z=z)
    except ValueError as exc:
        raise ConfigError(f"q/alpha/b_right/z: {exc}") from None

    eps = _number(flat, "epsilon", _fraction_float, required=True)
    if not 0 < eps < 1:
        raise ConfigError(f"epsilon: must lie in (0, 1), got {eps}")
    t = _number(flat, "t_macro", _fraction_float, default=1.0)
    if not t >= 0:
        raise ConfigError(f"t_macro: must be nonnegative, got {t}")
    replicas = _number(flat, "replicas", int, default=1)
    if replicas < 1:
        raise ConfigError(f"replicas: must be at least 1, got {replicas}")
    seed = _number(flat, "seed", int, default=0)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {seed}")

    ic_map = {k[3:]: v for k, v in flat.items() if k.startswith("ic.")}
    ic_map.setdefault("kind", "step")
    if "epsilon" not in ic_map:
        ic_map["epsilon"] = repr(eps)
    try:
        ic = IcSpec.from_mapping(ic_map)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"ic.*: {exc}") from None
    if ic.kind == "bernoulli" and ic.rho is None:
        ic = replace(ic, rho=coeffs.density)

    auto = _number(flat, "window.auto", _bool, default="window.halfwidth" not in flat)
    if auto and "window.halfwidth" in flat:
        raise ConfigError("window.auto|window.halfwidth: give only one")
    if auto:
        halfwidth = int(math.ceil(2.0 * scale_factor(coeffs, eps)))
    else:
        halfwidth = _number(flat, "window.halfwidth", int, required=True)
        if halfwidth < 0:
            raise ConfigError(f"window.halfwidth: must be nonnegative, got {halfwidth}")

    s = _number(flat, "sheet.s", _fraction_float, default=0.0)
    if not 0 <= s <= t:
        raise ConfigError(f"sheet.s: need 0 <= s <= t_macro, got {s}")
    y_grid = _number(flat, "sheet.y_grid", parse_grid, default=np.array([0.0]))
    x_grid = _number(flat, "sheet.x_grid", parse_grid, default=np.array([0.0]))
    for key, g in (("sheet.y_grid", y_grid), ("sheet.x_grid", x_grid)):
        if g.size == 0 or np.any(np.diff(g) <= 0):
            raise ConfigError(f"{key}: must be a nonempty strictly increasing grid")

    checks = tuple(c.strip() for c in flat.get("suite.checks", "").split(",") if c.strip())
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise ConfigError(f"suite.checks: unknown check(s) {', '.join(unknown)}")
    inject = flat.get("suite.inject")
    if inject is not None and inject not in INJECTIONS:
        raise ConfigError(f"suite.inject: expected one of {sorted(INJECTIONS)}, got {inject!r}")

    return RunConfig(coeffs, eps, t, replicas, seed, ic, halfwidth, s, y_grid, x_grid, checks, inject,
                     dict(sorted(flat.items())))


# ---------------------------------------------------------------------------
# jobs (module level so that worker processes can import them)


def _simulate_replica(job: tuple[RunConfig, int]) -> tuple[int, bytes]:
    cfg, index = job
    s = derive_seed(cfg.seed, index)
    c = cfg.coeffs
    mid = int(round(center(c, cfg.eps, cfg.t)))
    lo, hi = mid - cfg.halfwidth, mid + cfg.halfwidth
    xs = np.arange(lo, hi + 1, dtype=np.int64)
    _, h, _ = verify.evolve_ic(c, cfg.eps, cfg.t, replace(cfg.ic, seed=s), lo, hi, xs, s)
    resc = rescale_values(c, cfg.eps, cfg.t, xs, h)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    for x, raw, r in zip(xs, h, resc):
        wr.writerow([index, int(x), int(raw), repr(float(r))])
    return index, buf.getvalue().encode("utf-8")


def _sheet_replica(job: tuple[RunConfig, int]) -> tuple[int, bytes]:
    cfg, index = job
    sheet = build_sheet(cfg.coeffs, cfg.eps, cfg.s, cfg.t, cfg.y_grid, cfg.x_grid, derive_seed(cfg.seed, index))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["y", "x", "raw_h", "rescaled"])
    for i, y in enumerate(sheet.y_grid):
        for j, x in enumerate(sheet.x_grid):
            wr.writerow([repr(float(y)), repr(float(x)), int(sheet.raw[i, j]), repr(float(sheet.rescaled[i, j]))])
    return index, buf.getvalue().encode("utf-8")


def _run_jobs(fn: Callable, jobs: Sequence, workers: int) -> list:
    """Results of ``fn`` over ``jobs`` in job order, whatever the pool size."""
    if workers <= 1 or len(jobs) <= 1:
        out = [fn(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(fn, jobs))
    return sorted(out, key=lambda r: r[0])


# ---------------------------------------------------------------------------
# verify suites


def _asep_coeffs() -> ScalingCoeffs:
    return derive_coeffs("asep", 0.5, 0.0)


def _s6v_coeffs() -> ScalingCoeffs:
    return derive_coeffs("s6v", 0.5, 1.0, z=0.25)


def _decoupled_monotonicity(seed: int) -> verify.TestReport:
    """Monotonicity judged as usual, but the two systems use unrelated clocks."""
    r = verify.check_monotonicity_asep(trials=20, seed=seed, negative_control=True)
    return replace(r, name="monotonicity_asep_decoupled", passed=r.failures == 0, bound="zero violations",
                   note="injected fault: the second system runs on decoupled clocks")


CHECKS: dict[str, tuple[str, Callable[[int], list[verify.TestReport]]]] = {
    "vertex_stochasticity": ("exact", lambda s: [verify.check_vertex_stochasticity(seed=s)]),
    "arrow_conservation": ("exact", lambda s: [verify.check_arrow_conservation(seed=s)]),
    "monotonicity_asep": ("exact", lambda s: [verify.check_monotonicity_asep(seed=s)]),
    "variational_asep": ("exact", lambda s: [
        verify.check_variational(_asep_coeffs(), 1 / 64, 1.0, IcSpec("bernoulli", rho=0.5), seed=s),
        verify.check_variational(_asep_coeffs(), 1 / 64, 1.0, IcSpec("step"), seed=s),
    ]),
    "flux_identity": ("exact", lambda s: [verify.check_flux_identity(_asep_coeffs(), seed=s),
                                          verify.check_flux_identity(_s6v_coeffs(), seed=s)]),
    "merge_projection": ("exact", lambda s: [verify.check_merge_projection(m, seed=s) for m in ("asep", "s6v")]),
    "finite_speed": ("exact", lambda s: [verify.check_finite_speed(m, seed=s) for m in ("asep", "s6v")]),
    "monotonicity_s6v": ("statistical", lambda s: [verify.check_monotonicity_s6v(seed=s)]),
    "variational_s6v": ("statistical", lambda s: [
        verify.check_variational(_s6v_coeffs(), 1 / 64, 1.0, IcSpec("bernoulli", rho=_s6v_coeffs().density), seed=s),
        verify.check_variational(_s6v_coeffs(), 1 / 64, 1.0, IcSpec("step"), seed=s),
    ]),
    "stationarity": ("statistical", lambda s: [
        verify.check_stationarity(m, rho, 200, seed=s) for m in ("asep", "s6v") for rho in (0.5, 0.525)
    ]),
    "overtaking": ("statistical", lambda s: [
        verify.check_overtaking(m, q, seed=s) for m in ("asep", "s6v") for q in (0.0, 0.25, 0.5)
    ]),
    "rw_above_line": ("statistical", lambda s: [verify.check_rw_above_line(seed=s)]),
    "universality_trend": ("statistical", lambda s: [
        verify.check_universality_trend(_asep_coeffs(), _s6v_coeffs(), seed=s)
    ]),
}

INJECTIONS: dict[str, Callable[[int], verify.TestReport]] = {"decoupled_seeds": _decoupled_monotonicity}


def _suite_checks(suite: str, only: Sequence[str]) -> list[str]:
    names = [n for n, (kind, _) in CHECKS.items() if suite == "all" or kind == suite]
    if only:
        outside = [n for n in only if n not in names]
        if outside:
            raise ConfigError(f"suite.checks: {', '.join(outside)} not in the {suite} suite")
        names = [n for n in names if n in only]
    return names


# ---------------------------------------------------------------------------
# output


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _write_outputs(out: Path, files: dict[str, bytes], manifest: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        target = out / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    manifest["digests"] = {name: _digest(data) for name, data in sorted(files.items())}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest(command: str, cfg: RunConfig | None, seeds: list[int], started: float, extra: dict | None = None) -> dict:
    m = {
        "command": command,
        "config": cfg.snapshot if cfg is not None else {},
        "master_seed": cfg.seed if cfg is not None else None,
        "replica_seeds": seeds,
        "formula_version": FORMULA_VERSION,
        "package_version": _package_version(),
        "wall_time_seconds": round(time.perf_counter() - started, 3),
    }
    if extra:
        m.update(extra)
    return m


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: Path, jobs: int) -> int:
    started = time.perf_counter()
    results = _run_jobs(_simulate_replica, [(cfg, i) for i in range(cfg.replicas)], jobs)
    body = b"replica,x,raw_h,rescaled\n" + b"".join(data for _, data in results)
    seeds = [derive_seed(cfg.seed, i) for i in range(cfg.replicas)]
    _write_outputs(out, {"heights.csv": body}, _manifest("simulate", cfg, seeds, started))
    return EXIT_OK


def cmd_sheet(cfg: RunConfig, out: Path, jobs: int) -> int:
    started = time.perf_counter()
    results = _run_jobs(_sheet_replica, [(cfg, i) for i in range(cfg.replicas)], jobs)
    files = {"coeffs.json": (cfg.coeffs.to_json() + "\n").encode("utf-8")}
    if cfg.replicas == 1:
        files["sheet.csv"] = results[0][1]
    else:
        files.update({f"sheet_{i:04d}.csv": data for i, data in results})
    seeds = [derive_seed(cfg.seed, i) for i in range(cfg.replicas)]
    _write_outputs(out, files, _manifest("sheet", cfg, seeds, started))
    return EXIT_OK


def _run_check(job: tuple[str, int]) -> tuple[str, list[dict]]:
    name, seed = job
    if name in INJECTIONS:
        return name, [INJECTIONS[name](seed).to_dict()]
    return name, [r.to_dict() for r in CHECKS[name][1](seed)]


def cmd_verify(suite: str, cfg: RunConfig | None, seed: int, out: Path, jobs: int) -> int:
    started = time.perf_counter()
    only = cfg.checks if cfg is not None else ()
    names = _suite_checks(suite, only)
    if cfg is not None and cfg.inject:
        names.append(cfg.inject)
    order = {n: k for k, n in enumerate(names)}
    results = _run_jobs(_run_check, [(n, seed) for n in names], jobs) if names else []
    results.sort(key=lambda r: order[r[0]])
    reports = [verify.TestReport(**d) for _, ds in results for d in ds]
    files = {f"reports/{r.name}.json": (r.to_json() + "\n").encode("utf-8") for r in reports}
    buf = io.StringIO()
    verify.write_summary_csv(reports, buf)
    files["summary.csv"] = buf.getvalue().encode("utf-8")
    extra = {"suite": suite, "checks": names, "master_seed": seed}
    _write_outputs(out, files, _manifest("verify", cfg, [seed], started, extra))
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.failures}/{r.trials} failures ({r.bound})")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_coeffs(cfg: RunConfig) -> int:
    print(cfg.coeffs.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="config file or manifest.json to replay")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides the config)")
    common.add_argument("--replicas", type=int, metavar="N", help="replica count (overrides the config)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--jobs", type=int, metavar="N", default=1, help="worker processes (default: 1)")

    parser = argparse.ArgumentParser(prog="kpzsim", description="ASEP and stochastic six vertex simulations.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="evolve an initial condition and write heights.csv")
    sub.add_parser("sheet", parents=[common], help="write the coupled step-initial sheet on a grid")
    v = sub.add_parser("verify", parents=[common], help="run a suite of checks and write reports")
    v.add_argument("suite", help="exact, statistical or all")
    sub.add_parser("coeffs", parents=[common], help="print the scaling coefficients as JSON")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    out = {}
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.replicas is not None:
        out["replicas"] = str(args.replicas)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    out = Path(args.out)
    jobs = max(1, args.jobs)
    try:
        if args.command == "verify":
            if args.suite not in SUITES:
                raise ConfigError(f"suite: expected one of {', '.join(SUITES)}, got {args.suite!r}")
            cfg = None
            seed = args.seed if args.seed is not None else 0
            if args.config:
                flat = load_config(args.config)
                flat.setdefault("model", "asep")
                flat.setdefault("q", "0.5")
                flat.setdefault("epsilon", "1/64")
                cfg = validate(flat, _overrides(args))
                seed = cfg.seed
            return cmd_verify(args.suite, cfg, seed, out, jobs)
        if not args.config:
            raise ConfigError("--config: required for this command")
        cfg = validate(load_config(args.config), _overrides(args))
        if args.command == "simulate":
            return cmd_simulate(cfg, out, jobs)
        if args.command == "sheet":
            return cmd_sheet(cfg, out, jobs)
        return cmd_coeffs(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WindowTooSmall, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
