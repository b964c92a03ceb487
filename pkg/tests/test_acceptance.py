"""Acceptance criteria 1-13 at full size.

Each test prints one ``criterion N: PASS|FAIL`` line (also collected into the
terminal summary).  The whole module takes roughly half an hour on one core;
select it with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time
from pathlib import Path

import pytest

from kpzsim import cli, verify
from kpzsim.initial import IcSpec
from kpzsim.scaling import derive_coeffs

ASEP = derive_coeffs("asep", 0.5, 0.0)
S6V = derive_coeffs("s6v", 0.5, 1.0, z=0.25)


def _verdict(log, n, ok, detail, elapsed):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail} ({elapsed:.1f}s)"
    print(line)
    log.append(line)
    assert ok, line


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _summary(reports):
    return "; ".join(f"{r.name} {r.failures}/{r.trials}" for r in reports)


def test_criterion_01_vertex_stochasticity(acceptance_log):
    r, dt = _timed(lambda: verify.check_vertex_stochasticity(pairs=50, seed=1))
    _verdict(acceptance_log, 1, r.passed and r.trials == 50 and dt < 1.0, _summary([r]) + ", budget 1s", dt)


def test_criterion_02_arrow_conservation(acceptance_log):
    r, dt = _timed(lambda: verify.check_arrow_conservation(vertices=10**6, seed=2))
    ok = r.passed and r.statistics["vertices"] >= 10**6 and dt < 10.0
    _verdict(acceptance_log, 2, ok, f"{r.statistics['vertices']} vertices, {r.failures} violations, budget 10s", dt)


def test_criterion_03_asep_monotonicity(acceptance_log):
    r, dt = _timed(lambda: verify.check_monotonicity_asep(trials=1000, T=50.0, size=2000, seed=3))
    _verdict(acceptance_log, 3, r.passed and dt < 60.0,
             f"{r.failures}/{r.trials} trials with violations, budget 60s", dt)


def test_criterion_04_asep_variational(acceptance_log):
    def run():
        return [verify.check_variational(ASEP, 1 / 64, 1.0, IcSpec("bernoulli", rho=0.5), replicas=100, seed=4),
                verify.check_variational(ASEP, 1 / 64, 1.0, IcSpec("step"), replicas=100, seed=4)]

    rs, dt = _timed(run)
    ok = all(r.passed and r.statistics["violating_points"] == 0 for r in rs) and dt < 300.0
    _verdict(acceptance_log, 4, ok, _summary(rs) + ", budget 300s", dt)


def test_criterion_05_s6v_monotonicity(acceptance_log):
    N = 500
    M = math.ceil(math.log(N) ** 2)
    t = math.floor(0.5 * N / 2)
    r, dt = _timed(lambda: verify.check_monotonicity_s6v(N=N, M=M, t=t, trials=200, seed=5, b=0.5))
    ok = r.passed and r.statistics["frequency"] <= 0.05 and M == 39
    _verdict(acceptance_log, 5, ok, f"M={M}, t={t}, discrepancy > M in {r.failures}/200 trials", dt)


def test_criterion_06_stationarity(acceptance_log):
    def run():
        return [verify.check_stationarity(m, rho, 200, pattern_len=3, sites=10**6, seed=6)
                for m in ("asep", "s6v") for rho in (0.5, 0.525)]

    rs, dt = _timed(run)
    ok = all(r.passed and r.statistics["sites"] >= 10**6 for r in rs)
    _verdict(acceptance_log, 6, ok, _summary(rs) + " patterns rejected at 1%/8", dt)


def test_criterion_07_overtaking(acceptance_log):
    def run():
        out = [verify.check_overtaking(m, q, k_max=10, t_values=(10, 100, 1000), trials=10**4, seed=7)
               for m in ("asep", "s6v") for q in (0.25, 0.5)]
        zero = [verify.overtaking_counts(m, 0.0, (10, 100, 1000), 10**3, seed=7) for m in ("asep", "s6v")]
        return out, zero

    (rs, zero), dt = _timed(run)
    ok = all(r.passed for r in rs) and all(not z.any() for z in zero)
    _verdict(acceptance_log, 7, ok, _summary(rs) + "; q=0 overtakes: " + str(sum(int(z.sum()) for z in zero)), dt)


def test_criterion_08_flux_identity(acceptance_log):
    rs, dt = _timed(lambda: [verify.check_flux_identity(c, replicas=100, seed=8) for c in (ASEP, S6V)])
    ok = all(r.passed and r.statistics["mismatched_records"] == 0 for r in rs)
    _verdict(acceptance_log, 8, ok, _summary(rs), dt)


def test_criterion_09_merge_projection(acceptance_log):
    rs, dt = _timed(lambda: [verify.check_merge_projection(m, instances=100, seed=9) for m in ("asep", "s6v")])
    _verdict(acceptance_log, 9, all(r.passed for r in rs), _summary(rs), dt)


def test_criterion_10_rw_above_line(acceptance_log):
    r, dt = _timed(lambda: verify.check_rw_above_line(walks=10**5, seed=10))
    ok = r.passed and r.statistics["hand_case"] == "1/2" and len(r.statistics["grid"]) == 27
    _verdict(acceptance_log, 10, ok, f"{r.failures}/{r.trials} grid failures, hand case {r.statistics['hand_case']}",
             dt)


def test_criterion_11_finite_speed(acceptance_log):
    rs, dt = _timed(lambda: [verify.check_finite_speed(m, eps=0.1, trials=1000, seed=11) for m in ("asep", "s6v")])
    worst = max(r.statistics["max_displacement"] for r in rs)
    _verdict(acceptance_log, 11, all(r.passed for r in rs), _summary(rs) + f", max displacement {worst}", dt)


def test_criterion_12_universality_trend(acceptance_log):
    r, dt = _timed(lambda: verify.check_universality_trend(ASEP, S6V, eps_coarse=1 / 32, eps_fine=1 / 128,
                                                           replicas=2000, batches=3, seed=12, ks_max=0.08))
    rows = r.statistics["rows"]
    ks = ", ".join(f"b{row['batch']} eps={row['eps']:g}: {row['ks']:.4f}" for row in rows)
    _verdict(acceptance_log, 12, r.passed and dt <= 1800.0, f"KS {ks}; budget 1800s", dt)


def _files(out: Path):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_criterion_13_reproducibility(acceptance_log, tmp_path):
    configs = {
        "simulate": "model = asep\nq = 0.5\nalpha = 0\nepsilon = 1/8\nt_macro = 1\nreplicas = 6\nseed = 13\n"
                    "[ic]\nkind = bernoulli\nrho = 0.5\n",
        "sheet": "model = s6v\nq = 0.5\nz = 0.25\nalpha = 1\nepsilon = 1/27\nt_macro = 1\nreplicas = 3\nseed = 13\n"
                 "[sheet]\ns = 0\ny_grid = -1:1:5\nx_grid = -0.5,0,0.5\n",
        "verify": "seed = 13\n[suite]\nchecks = rw_above_line, monotonicity_s6v\n",
    }

    def run():
        problems = []
        for cmd, text in configs.items():
            cfg = tmp_path / f"{cmd}.ini"
            cfg.write_text(text)
            head = [cmd, "statistical"] if cmd == "verify" else [cmd]
            serial, parallel, replay = (tmp_path / f"{cmd}_{k}" for k in ("serial", "parallel", "replay"))
            codes = [cli.main(head + ["--config", str(cfg), "--out", str(serial)]),
                     cli.main(head + ["--config", str(cfg), "--out", str(parallel), "--jobs", "3"]),
                     cli.main(head + ["--config", str(serial / "manifest.json"), "--out", str(replay)])]
            if any(codes):
                problems.append(f"{cmd} exit codes {codes}")
            a, b, c = _files(serial), _files(parallel), _files(replay)
            if not a or a != b or a != c:
                problems.append(f"{cmd} outputs differ")
        return problems

    problems, dt = _timed(run)
    _verdict(acceptance_log, 13, not problems,
             "serial, parallel and replayed outputs byte-identical" if not problems else "; ".join(problems), dt)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
