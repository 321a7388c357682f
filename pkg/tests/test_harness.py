import json
import math
from pathlib import Path

import numpy as np
import pytest

from ljmeso.errors import ConfigError, NumericalAbort
from ljmeso.harness import cli
from ljmeso.harness.config import parse_config
from ljmeso.harness.outputs import format_value, write_csv, write_json
from ljmeso.harness.studies import (StudyResult, coincidence_study, convergence_study,
                                    convergence_verdict, moment_estimate, prepare)
from ljmeso.meso import Verdict, fit_loglog

TINY = (Path(__file__).parent / "data" / "tiny.toml").read_text()


def _edit(text: str, section: str, line: str) -> str:
    return text.replace(f"[{section}]\n", f"[{section}]\n{line}\n", 1)


def _errors(text: str, **kw) -> list[tuple[str, str]]:
    with pytest.raises(ConfigError) as err:
        parse_config(text, **kw)
    return err.value.violations


# ---------------------------------------------------------------------------
# parsing


def test_minimal_config_defaults():
    cfg = parse_config(TINY)
    assert cfg.kernel.R0 == 1.0 and cfg.nu == 1.0 and cfg.q == 4.0
    assert cfg.mollifier.profile == "poly3" and cfg.mollifier.support_radius == 1.0
    assert cfg.eta == 1.0 and cfg.eta_bar is None and cfg.B_override is None
    assert cfg.study.m == 2.0 and cfg.study.z == 2.0 and cfg.study.seed_base == 0
    assert cfg.pde.n_steps == 10 and cfg.u0_variance == 0.25
    assert cfg.waivers == () and len(cfg.digest) == 16
    assert parse_config(TINY).digest == cfg.digest
    assert parse_config(TINY.replace("seeds = 3", "seeds = 4")).digest != cfg.digest


def test_d3_config_parses():
    text = (Path(__file__).parents[1] / "src/ljmeso/configs/config_B.toml").read_text()
    cfg = parse_config(text)
    assert cfg.kernel.d == 3 and cfg.study.kind == "convergence"
    assert parse_config(text, kind="sconv").study.kind == "sconv"


def test_exponent_order_rejected():
    errs = _errors(TINY.replace("a = 0.8", "a = 1.0"))
    assert any("d-1 > a > b > 0" in m for _, m in errs)


def test_alpha_above_admissible():
    text = TINY.replace("alpha = 0.15", "alpha = 0.2")
    errs = _errors(text)
    assert errs[0][0] == "hypothesis" and "1/(2(beta + d/r'))" in errs[0][1]
    waived = parse_config(_edit(text, "study", "claim_coverage = false"))
    assert any(w.startswith("uncovered-regime") and "alpha" in w for w in waived.waivers)
    # a pure simulation makes no claim, so nothing is waived either
    assert parse_config(text, kind="simulate").waivers == ()


def test_single_seed_rejected_for_scaling():
    errs = _errors(TINY.replace("seeds = 3", "seeds = 1"), kind="sconv")
    assert any("seeds" in m for _, m in errs)


def test_every_violation_listed():
    text = _edit(TINY, "grid", "spacing = 3")
    text = text.replace("dt = 0.002", "dt = 0.003").replace("n = 32", "n = 1")
    errs = _errors(text)
    assert any("unknown key grid.spacing" in m for _, m in errs)
    errs = _errors(TINY.replace("dt = 0.002", "dt = 0.003").replace("r = 11.0", "r = 5.0")
                   .replace("[meso]\nalpha = 0.15", "[meso]\nalpha = 1.5"))
    msgs = " | ".join(m for _, m in errs)
    assert "does not divide" in msgs and "r >= p'" in msgs and "alpha" in msgs
    assert {k for k, _ in errs} == {"config", "hypothesis"}


def test_malformed_inputs():
    assert "malformed TOML" in _errors("[kernel\n")[0][1]
    errs = _errors(TINY.replace("[meso]\nalpha = 0.15", ""))
    assert any("missing section [meso]" in m for _, m in errs)
    errs = _errors(TINY.replace("n = 32", 'n = "big"'))
    assert any("grid.n" in m for _, m in errs)
    assert any("kind" in m for _, m in _errors(TINY.replace('"convergence"', '"plot"')))
    assert any("unknown section" in m for _, m in _errors(TINY + "\n[plot]\nx = 1\n"))


def test_under_resolved_mollifier_rejected():
    errs = _errors(TINY.replace("N_list = [16, 32]", "N_list = [16, 10000000]"))
    assert any("two grid spacings" in m for _, m in errs)


def test_horizon_check_and_waiver():
    text = TINY.replace("epsilon = 0.0002", "epsilon = 5.0")
    errs = _errors(text)
    assert errs[0][0] == "hypothesis" and "existence condition" in errs[0][1]
    waived = parse_config(_edit(text, "pde", "waive_horizon = true"))
    assert any("existence condition" in w for w in waived.waivers)
    assert parse_config(text, kind="simulate").waivers == ()


def test_regime_hypotheses():
    # super-singular needs 2 - d + a < beta - d/r < 1
    errs = _errors(TINY.replace("beta = 0.99", "beta = 0.5"))
    assert any("super-singular" in m for _, m in errs)


# ---------------------------------------------------------------------------
# helpers


def test_format_value():
    assert format_value(0.1) == "0.1" and format_value(1 / 3) == repr(1 / 3)
    assert format_value(True) == "true" and format_value(np.bool_(False)) == "false"
    assert format_value(math.nan) == "nan" and format_value(-math.inf) == "-inf"
    assert format_value(None) == "" and format_value(Verdict.WITHIN) == "WithinTolerance"
    assert format_value(np.int64(7)) == "7"


def test_writers_are_byte_stable(tmp_path):
    rows = [{"b": 0.1, "a": 2}, {"b": math.inf, "a": 3}]
    p1 = write_csv(tmp_path / "x.csv", rows)
    assert p1.read_text() == "b,a\n0.1,2\ninf,3\n"
    j = write_json(tmp_path / "x.json", {"z": 1.0, "a": [np.float64(0.5), math.nan]})
    assert json.loads(j.read_text()) == {"a": [0.5, "nan"], "z": 1.0}
    assert j.read_text().index('"a"') < j.read_text().index('"z"')


def test_moment_estimate_and_verdict():
    assert moment_estimate([3.0, -4.0], 2) == pytest.approx(math.sqrt(12.5))
    assert moment_estimate([1.0, 2.0], 1) == pytest.approx(1.5)
    Ns = [128, 256, 512, 1024]
    fit = fit_loglog(Ns, [n ** -0.2 for n in Ns])
    assert convergence_verdict(fit, [4, 3, 2, 1], 0.15).verdict is Verdict.WITHIN
    assert convergence_verdict(fit, [4, 3, 3, 1], 0.15).verdict is Verdict.OUTSIDE
    assert convergence_verdict(fit, [4, 3, 2, 1], 0.5).verdict is Verdict.OUTSIDE
    degenerate = fit_loglog(Ns, [0, 0, 0, 0])
    assert convergence_verdict(degenerate, [0, 0, 0, 0], 0.15).verdict is Verdict.DEGENERATE


# ---------------------------------------------------------------------------
# studies


def test_injected_exact_density_is_degenerate():
    ctx = prepare(parse_config(TINY))
    res = convergence_study(ctx, density_override=lambda tr, sol: (lambda k: sol.at(tr.times[k])))
    assert all(r["sup_error"] == 0 for r in res.tables["runs"])
    assert res.fits["Lm_error"].verdict is Verdict.DEGENERATE


def test_thread_count_does_not_change_results():
    cfg = parse_config(TINY)
    a = convergence_study(prepare(cfg, threads=1))
    b = convergence_study(prepare(cfg, threads=3))
    assert a.tables == b.tables and a.summary == b.summary


@pytest.mark.parametrize("B, expected", [(1e6, 1.0), (1e-9, 0.0)])
def test_coincidence_extremes(B, expected):
    text = TINY + f"\n[cutoff]\nB = {B!r}\n"
    res = coincidence_study(prepare(parse_config(text, kind="coincidence")))
    for row in res.tables["summary"]:
        assert row["coincidence_fraction"] == expected
        assert row["noise_replayed"]


# ---------------------------------------------------------------------------
# command line


@pytest.fixture()
def tiny_path(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


def _run(args) -> int:
    return cli.main([str(a) for a in args])


def test_cli_success_and_manifest(tiny_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert _run(["convergence", "--config", tiny_path, "--out", out, "--seed-base", 5]) == 0
    manifest = json.loads((out / "convergence_manifest.json").read_text())
    assert manifest["status"] == "complete" and manifest["seeds"] == [5, 6, 7]
    assert set(manifest["files"]) == {"convergence_runs.csv", "convergence_summary.csv",
                                      "convergence_fit.csv"}
    assert {"bessel_heat", "holder"} <= set(manifest["measured_constants"])
    assert manifest["grid_truncation_mass_margin"] >= 0
    assert "numpy" in manifest["versions"]
    for name in manifest["files"]:
        assert (out / name).exists()
    assert "wall_clock_seconds" in json.loads((out / "convergence_timing.json").read_text())
    assert "slope" in json.loads(capsys.readouterr().out)


def test_cli_rerun_is_byte_identical(tiny_path, tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert _run(["convergence", "--config", tiny_path, "--out", out, "--threads", 1 + k]) == 0
        runs.append({p.name: p.read_bytes() for p in out.iterdir() if "timing" not in p.name})
    assert runs[0] == runs[1]


def test_cli_studies_share_a_directory(tiny_path, tmp_path):
    out = tmp_path / "shared"
    assert _run(["solve-pde", "--config", tiny_path, "--out", out]) == 0
    assert _run(["analyze-kernel", "--config", tiny_path, "--out", out]) == 0
    assert _run(["simulate", "--config", tiny_path, "--out", out]) == 0
    names = sorted(p.name for p in out.iterdir())
    for study in ("solve-pde", "analyze-kernel", "simulate"):
        assert f"{study}_manifest.json" in names
    assert "solve-pde_u_final.csv" in names and "simulate_traj_N16_seed0.csv" in names
    assert len(names) == len(set(names))


def test_cli_exit_codes(tiny_path, tmp_path, monkeypatch):
    out = tmp_path / "o"
    bad = tmp_path / "bad.toml"
    bad.write_text(TINY.replace("n = 32", "n = 0"))
    assert _run(["convergence", "--config", bad, "--out", out]) == 2
    hyp = tmp_path / "hyp.toml"
    hyp.write_text(TINY.replace("alpha = 0.15", "alpha = 0.2"))
    assert _run(["convergence", "--config", hyp, "--out", out]) == 3
    assert _run(["convergence", "--config", tmp_path / "missing.toml", "--out", out]) == 1

    def boom(name, ctx):
        raise NumericalAbort("synthetic blow-up")

    monkeypatch.setattr(cli, "run_study", boom)
    assert _run(["convergence", "--config", tiny_path, "--out", out]) == 4
    manifest = json.loads((out / "convergence_manifest.json").read_text())
    assert manifest["status"] == "aborted" and "synthetic" in manifest["error"]


def test_cli_unwritable_output(tiny_path, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert _run(["solve-pde", "--config", tiny_path, "--out", blocker / "sub"]) == 1


def test_empty_study_writes_manifest_only(tmp_path):
    cfg = parse_config(TINY)
    manifest = cli.build_manifest("empty", cfg, (0,), "complete", StudyResult("empty"))
    paths = cli.emit_outputs(tmp_path, StudyResult("empty"), manifest)
    assert [p.name for p in paths] == ["empty_manifest.json"]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["empty_manifest.json"]
