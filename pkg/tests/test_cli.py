import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisofield import cli
from anisofield.covariance import QuadResult


@pytest.fixture()
def iso_cache(tmp_path, monkeypatch):
    cache = tmp_path / "cache"
    monkeypatch.setenv(cli.ENV_CACHE_DIR, str(cache))
    return cache


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------


def test_parse_config_text_basics():
    raw, errors = cli.parse_config_text(
        "# comment\nexperiment = simulate\nseed = 3  # trailing\n")
    assert not errors
    assert raw == {"experiment": "simulate", "seed": "3"}


def test_parse_config_reports_duplicates_and_malformed():
    raw, errors = cli.parse_config_text(
        "experiment = simulate\nexperiment = quadrature\nnot a pair\n")
    assert any("duplicate key" in e for e in errors)
    assert any("expected 'key = value'" in e for e in errors)


def test_resolve_config_lists_every_violation():
    raw = {
        "experiment": "quadrature",
        "model.equation": "wave",
        "model.beta": "0.5",
        "grid.resolution": "8",
        "no.such.key": "1",
    }
    _, errors = cli.resolve_config(raw)
    joined = "\n".join(errors)
    assert "unknown key 'no.such.key'" in joined
    assert "beta >= 1" in joined
    assert "grid.resolution" in joined
    assert len(errors) >= 3


def test_resolve_config_rejects_inapplicable_keys():
    raw = {"experiment": "quadrature", "hitting.d": "4"}
    _, errors = cli.resolve_config(raw)
    assert any("not applicable" in e for e in errors)


def test_resolve_config_checks_point_arity():
    raw = {"experiment": "simulate", "model.k": "2", "points": "1,0"}
    _, errors = cli.resolve_config(raw)
    assert any("1+k=3" in e for e in errors)


def test_resolve_config_defaults_applied():
    cfg, errors = cli.resolve_config({"experiment": "simulate"})
    assert not errors
    assert cfg["model.equation"] == "heat"
    assert cfg["grid.resolution"] == 256
    assert cfg["points"][0] == (1.0, 0.0)


def test_hitting_eps_must_decrease():
    raw = {"experiment": "hitting", "hitting.eps": "0.2,0.3"}
    _, errors = cli.resolve_config(raw)
    assert any("strictly" in e and "decreasing" in e for e in errors)


# ---------------------------------------------------------------------------
# formatting
# ---------------------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_roundtrips_floats_exactly(x):
    assert float(cli._fmt(x)) == x


def test_fmt_bool_and_int():
    assert cli._fmt(True) == "true" and cli._fmt(np.False_) == "false"
    assert cli._fmt(np.int64(7)) == "7"


def test_csv_bytes_layout():
    data = cli.csv_bytes(["a", "b"], [[1, 0.5], [2, True]])
    assert data == b"a,b\n1,0.5\n2,true\n"


def test_cache_key_ignores_plumbing_keys():
    cfg, _ = cli.resolve_config({"experiment": "simulate"})
    other = dict(cfg)
    other["workers"] = 16
    other["output.dir"] = "/elsewhere"
    assert cli.cache_key(cfg) == cli.cache_key(other)
    third = dict(cfg)
    third["seed"] = 1
    assert cli.cache_key(cfg) != cli.cache_key(third)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def test_presets_lists_all(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("heat-k1-beta1", "heat-k2-beta1.5", "wave-k1-beta1",
                 "wave-k2-beta1.5", "heat-sigma"):
        assert f"[{name}]" in out


def test_describe_every_kind(capsys):
    for kind in cli.KINDS:
        assert cli.main(["describe", kind]) == 0
        out = capsys.readouterr().out
        assert kind.split("-")[0] in out
        assert "parameters and defaults" in out


def test_describe_unknown_kind(capsys):
    assert cli.main(["describe", "bogus"]) == 1
    assert "unknown experiment kind" in capsys.readouterr().err


def test_run_wave_beta_half_is_validation_error(tmp_path, capsys, iso_cache):
    cfgf = tmp_path / "bad.cfg"
    cfgf.write_text("experiment = simulate\nmodel.equation = wave\n"
                    "model.beta = 0.5\n")
    code = cli.main(["run", str(cfgf), "--output", str(tmp_path / "out")])
    assert code == 1
    assert "beta >= 1" in capsys.readouterr().err


def test_run_missing_output_dir(tmp_path, capsys, iso_cache):
    cfgf = tmp_path / "c.cfg"
    cfgf.write_text("experiment = quadrature\npoints = 1,0\n")
    assert cli.main(["run", str(cfgf)]) == 1
    assert "output.dir" in capsys.readouterr().err


def test_run_unknown_source(tmp_path, capsys, iso_cache):
    assert cli.main(["run", "no-such-thing", "-o", str(tmp_path)]) == 1
    assert "neither a readable file nor a preset" in capsys.readouterr().err


def test_quadrature_run_and_cache_roundtrip(tmp_path, capsys, iso_cache):
    cfgf = tmp_path / "q.cfg"
    cfgf.write_text("experiment = quadrature\npoints = 1,0; 1,0.5\n")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert cli.main(["run", str(cfgf), "-o", str(out1)]) == 0
    assert "computed" in capsys.readouterr().out
    assert cli.main(["run", str(cfgf), "-o", str(out2)]) == 0
    assert "cache hit" in capsys.readouterr().out
    b1 = (out1 / "moments.csv").read_bytes()
    assert b1 == (out2 / "moments.csv").read_bytes()
    # variance of the k=1, beta=1 heat field at t=1 appears at full precision
    header, *rows = b1.decode().strip().splitlines()
    assert header == "i,j,value,abs_error,converged"
    first = rows[0].split(",")
    assert abs(float(first[2]) - (2 * np.pi) ** -0.5) < 1e-9
    assert len(first[2].split(".")[1]) >= 15       # 17 significant digits
    # manifest lists every artifact with its content hash
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["experiment"] == "quadrature"
    for name, digest in manifest["files"].items():
        data = (out1 / name).read_bytes()
        assert cli._sha256(data) == digest


def test_manifest_rerun_reproduces_bytes(tmp_path, capsys, iso_cache):
    out1 = tmp_path / "o1"
    assert cli.main(["run", "heat-sigma", "-o", str(out1)]) == 0
    capsys.readouterr()
    out2 = tmp_path / "o2"
    # fresh cache: the manifest alone must be enough to recompute
    assert cli.main(["run", str(out1 / "manifest.json"), "-o", str(out2),
                     "--cache-dir", str(tmp_path / "cache2")]) == 0
    assert "computed" in capsys.readouterr().out
    assert (out1 / "values.csv").read_bytes() == \
        (out2 / "values.csv").read_bytes()


def test_cache_corruption_triggers_recompute(tmp_path, capsys, iso_cache):
    cfgf = tmp_path / "q.cfg"
    cfgf.write_text("experiment = quadrature\npoints = 1,0\n")
    out = tmp_path / "o"
    assert cli.main(["run", str(cfgf), "-o", str(out)]) == 0
    good = (out / "moments.csv").read_bytes()
    entries = [p for p in iso_cache.iterdir() if p.is_dir()]
    assert len(entries) == 1
    (entries[0] / "moments.csv").write_bytes(b"tampered\n")
    capsys.readouterr()
    assert cli.main(["run", str(cfgf), "-o", str(out)]) == 0
    captured = capsys.readouterr()
    assert "cache entry corrupt" in captured.err
    assert "computed" in captured.out
    assert (out / "moments.csv").read_bytes() == good


def test_simulate_workers_do_not_change_bytes(tmp_path, capsys, iso_cache):
    cfgf = tmp_path / "s.cfg"
    cfgf.write_text("experiment = simulate\ngrid.resolution = 64\n"
                    "grid.b_max = 8\nreplicas = 40\npoints = 1,0; 1.2,0.3\n")
    outs = []
    for i, w in enumerate(("1", "8")):
        out = tmp_path / f"o{i}"
        code = cli.main(["run", str(cfgf), "-o", str(out), "--workers", w,
                         "--cache-dir", str(tmp_path / f"cache{i}")])
        assert code == 0
        outs.append((out / "values.csv").read_bytes())
    assert outs[0] == outs[1]


def test_quadrature_nonconvergence_exits_3(tmp_path, capsys, iso_cache,
                                           monkeypatch):
    monkeypatch.setattr(cli, "second_moment",
                        lambda *a, **k: QuadResult(1.0, 1.0, False))
    cfgf = tmp_path / "q.cfg"
    cfgf.write_text("experiment = quadrature\npoints = 1,0\n")
    assert cli.main(["run", str(cfgf), "-o", str(tmp_path / "o")]) == 3
    assert "failed to converge" in capsys.readouterr().out


def test_oscillation_run_artifacts(tmp_path, capsys, iso_cache):
    cfgf = tmp_path / "osc.cfg"
    cfgf.write_text("experiment = oscillation\ngrid.resolution = 64\n"
                    "grid.b_max = 256\nreplicas = 20\n"
                    "oscillation.r0 = 0.0625\n")
    out = tmp_path / "o"
    assert cli.main(["run", str(cfgf), "-o", str(out)]) == 0
    summary = (out / "oscillation.csv").read_text().strip().splitlines()
    assert summary[0].startswith("r0,k_tilde,frequency")
    row = summary[1].split(",")
    assert float(row[2]) >= float(row[4])       # frequency >= target
    scan = (out / "oscillation_scan.csv").read_text().strip().splitlines()
    assert len(scan) > 2


def test_covering_run_artifacts(tmp_path, capsys, iso_cache):
    cfgf = tmp_path / "cov.cfg"
    cfgf.write_text("experiment = covering\ngrid.resolution = 128\n"
                    "grid.b_max = 256\nreplicas = 2\ncovering.p = 2,3\n"
                    "covering.d = 4\n")
    out = tmp_path / "o"
    assert cli.main(["run", str(cfgf), "-o", str(out)]) == 0
    lines = (out / "covering.csv").read_text().strip().splitlines()
    assert lines[0].startswith("p,replica,audit_passed")
    assert len(lines) == 5                      # 2 orders x 2 replicas
    assert all(line.split(",")[2] == "true" for line in lines[1:])


def test_hitting_run_artifacts(tmp_path, capsys, iso_cache):
    cfgf = tmp_path / "hit.cfg"
    cfgf.write_text("experiment = hitting\ngrid.resolution = 64\n"
                    "grid.b_max = 16\nreplicas = 5\nhitting.d = 2\n"
                    "hitting.eps = 0.8,0.55,0.4\n"
                    "hitting.coarse_scale = 0.4\n")
    out = tmp_path / "o"
    assert cli.main(["run", str(cfgf), "-o", str(out)]) == 0
    lines = (out / "hitting.csv").read_text().strip().splitlines()
    assert lines[0] == "d,eps,estimate,stderr,replicas,seed"
    assert len(lines) == 4
    ests = [float(line.split(",")[2]) for line in lines[1:]]
    assert ests == sorted(ests, reverse=True)


def test_env_cache_dir_is_used(tmp_path, capsys, iso_cache):
    cfgf = tmp_path / "q.cfg"
    cfgf.write_text("experiment = quadrature\npoints = 1,0\n")
    assert cli.main(["run", str(cfgf), "-o", str(tmp_path / "o")]) == 0
    assert iso_cache.is_dir() and any(iso_cache.iterdir())
