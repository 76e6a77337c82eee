import csv
import json

import numpy as np
import pytest

from gradlab import cli
from gradlab import traceio

QUAD_DEMO = """
[problem]
kind = quadratic
resolution = 64
phi = 1:0.5

[architecture]
kind = sinusoid
a = 1
w0 = 0.0, 1.0, 0.1

[flow]
kind = parametric
t_end = 60
record_every = 0.1

[analysis]
lojasiewicz = true
rate = true
critical_point = true
"""

GROW_DEMO = """
[problem]
kind = quadratic
resolution = 128
phi = 0:1.0, 1:0.5, 3:0.25

[architecture]
kind = sinusoid
a = 1
w0 = 0.2, 1.3, 0.1

[flow]
kind = parametric
t_end = 400
record_every = 0.5
stall_window = 40
stall_rel_change = 1e-9

[growth]
max_levels = 5
solution_tol = 1e-4
"""


def write_config(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestRun:
    def test_quadratic_demo(self, tmp_path, capsys):
        cfg = write_config(tmp_path, QUAD_DEMO)
        code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 0
        trace = traceio.read_trace(tmp_path / "out" / "cfg_trace.jsonl")
        assert trace.n_samples >= 50
        rows = read_rows(tmp_path / "out" / "cfg_analysis.csv")
        assert rows[0]["critical_case"] == "at_solution"
        assert float(rows[0]["alpha_hat"]) == pytest.approx(0.5, abs=0.02)

    def test_negative_tolerance_names_field(self, tmp_path, capsys):
        bad = QUAD_DEMO.replace("t_end = 60", "t_end = 60\nrel_tol = -1e-9")
        cfg = write_config(tmp_path, bad)
        code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 1
        assert "flow.rel_tol" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, QUAD_DEMO + "\n[flow2]\nx = 1\n")
        code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 1
        assert "flow2" in capsys.readouterr().err

    def test_absurd_initial_field_diverges(self, tmp_path):
        npbe_cfg = """
[problem]
kind = npbe
resolution = 128
phi = 1:0.1

[flow]
kind = nominal
t_end = 10
g0 = 1:1e6
max_steps = 2000
"""
        cfg = write_config(tmp_path, npbe_cfg)
        code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 2
        trace = traceio.read_trace(tmp_path / "out" / "cfg_trace.jsonl")
        assert trace.terminal_reason == "divergence"
        assert any(e.kind == "clamp" for e in trace.events)

    def test_manifest_lists_every_output(self, tmp_path):
        cfg = write_config(tmp_path, QUAD_DEMO)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        manifest = json.loads((out / "cfg_manifest.json").read_text())
        emitted = {p.name for p in out.iterdir()} - {"cfg_manifest.json"}
        assert set(manifest["files"]) == emitted

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path, QUAD_DEMO)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out1)]) == 0
        assert cli.main(["run", "--config", str(cfg), "--out", str(out2)]) == 0
        for name in ("cfg_trace.jsonl", "cfg_analysis.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_env_var_output_override(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, QUAD_DEMO)
        target = tmp_path / "env_out"
        monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(target))
        assert cli.main(["run", "--config", str(cfg)]) == 0
        assert (target / "cfg_trace.jsonl").exists()

    def test_jobs_pool_runs_all(self, tmp_path):
        cfg1 = write_config(tmp_path, QUAD_DEMO, "first.ini")
        cfg2 = write_config(tmp_path, QUAD_DEMO, "second.ini")
        out = tmp_path / "out"
        code = cli.main(
            ["run", "--config", str(cfg1), str(cfg2), "--out", str(out), "--jobs", "2"]
        )
        assert code == 0
        assert (out / "first_trace.jsonl").exists()
        assert (out / "second_trace.jsonl").exists()

    def test_nominal_writes_terminal_field(self, tmp_path):
        nominal = """
[problem]
kind = quadratic
resolution = 64
phi = 1:0.5

[flow]
kind = nominal
t_end = 5
g0 = 1:1.5
"""
        cfg = write_config(tmp_path, nominal)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        from gradlab import spaces as sp

        data = (out / "cfg_terminal.field").read_bytes()
        field = sp.field_from_bytes(data)
        assert field.basis.n == 64


class TestGrow:
    def test_three_mode_demo(self, tmp_path):
        cfg = write_config(tmp_path, GROW_DEMO)
        out = tmp_path / "out"
        code = cli.main(["grow", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        rows = read_rows(out / "cfg_growth.csv")
        assert 1 <= len(rows) <= 5
        expanded = [r for r in rows if r["verdict"] == "expanded"]
        assert len(expanded) <= 4
        assert float(rows[-1]["end_loss"]) <= 1e-4

    def test_representable_target_no_expansion(self, tmp_path):
        text = GROW_DEMO.replace("phi = 0:1.0, 1:0.5, 3:0.25", "phi = 2:0.7").replace(
            "w0 = 0.2, 1.3, 0.1", "w0 = 0.0, 1.9, 0.5"
        )
        cfg = write_config(tmp_path, text)
        out = tmp_path / "out"
        assert cli.main(["grow", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_rows(out / "cfg_growth.csv")
        assert len(rows) == 1
        assert rows[0]["verdict"] == "converged"

    def test_duplicate_frequency_exit_code(self, tmp_path):
        text = (
            GROW_DEMO.replace("phi = 0:1.0, 1:0.5, 3:0.25", "phi = 0:0.8, 2:0.3")
            .replace("w0 = 0.2, 1.3, 0.1", "w0 = 0.0, 1.0, 0.0")
            + "forced_frequencies = 1.0\n"
        )
        cfg = write_config(tmp_path, text)
        out = tmp_path / "out"
        code = cli.main(["grow", "--config", str(cfg), "--out", str(out)])
        assert code == 3

    def test_eci_alias(self, tmp_path):
        text = GROW_DEMO.replace("phi = 0:1.0, 1:0.5, 3:0.25", "phi = 2:0.7").replace(
            "w0 = 0.2, 1.3, 0.1", "w0 = 0.0, 1.9, 0.5"
        )
        cfg = write_config(tmp_path, text)
        out = tmp_path / "out"
        assert cli.main(["eci", "--config", str(cfg), "--out", str(out)]) == 0


SPECTRUM_SINUSOID = """
[problem]
kind = quadratic
resolution = 256
phi = 1:0.5

[architecture]
kind = sinusoid
a = 2

[spectrum]
count = 5
seed = 3
"""


class TestSpectrum:
    def test_sinusoid_random_rows_consistent(self, tmp_path):
        cfg = write_config(tmp_path, SPECTRUM_SINUSOID)
        out = tmp_path / "out"
        assert cli.main(["spectrum", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_rows(out / "cfg_spectrum.csv")
        assert len(rows) == 5
        assert all(r["consistency"] == "pass" for r in rows)

    def test_spiral_sweep_matches_closed_form(self, tmp_path):
        text = """
[architecture]
kind = spiral

[spectrum]
sweep = 0:10:101
"""
        cfg = write_config(tmp_path, text)
        out = tmp_path / "out"
        assert cli.main(["spectrum", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_rows(out / "cfg_spectrum.csv")
        assert len(rows) == 101
        for r in rows:
            w = float(r["w0"])
            assert float(r["min_nonzero_eig"]) == pytest.approx(
                1.0 + w * w, abs=1e-10
            )

    def test_affine_rows_identical(self, tmp_path):
        text = """
[problem]
kind = quadratic
resolution = 64
phi = 1:0.5

[architecture]
kind = affine
modes = 1, 2, 3

[spectrum]
count = 4
seed = 0
"""
        cfg = write_config(tmp_path, text)
        out = tmp_path / "out"
        assert cli.main(["spectrum", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_rows(out / "cfg_spectrum.csv")
        eig_cols = [k for k in rows[0] if k.startswith("eig")]
        first = [rows[0][c] for c in eig_cols]
        for r in rows[1:]:
            assert [r[c] for c in eig_cols] == first


class TestCoverage:
    def test_spiral_beats_line_on_median(self, tmp_path):
        text = "[coverage]\ncount = 100\nseed = 0\n"
        cfg = write_config(tmp_path, text)
        out = tmp_path / "out"
        assert cli.main(["coverage-demo", "--config", str(cfg), "--out", str(out)]) == 0
        summary = read_rows(out / "cfg_coverage_summary.csv")[0]
        assert float(summary["median_spiral_distance"]) < float(
            summary["median_line_distance"]
        )
        rows = read_rows(out / "cfg_coverage.csv")
        assert len(rows) == 100

    def test_target_on_line(self):
        rows = cli.coverage_distances(np.array([[37.0, 37.0]]), 150.0, 1e-3)
        assert rows[0][2] <= 1e-3  # line distance ~ 0

    def test_origin_close_to_both(self):
        rows = cli.coverage_distances(np.array([[0.0, 0.0]]), 150.0, 1e-3)
        assert rows[0][2] <= 1e-3
        assert rows[0][3] <= 1e-3


class TestAnalyze:
    def test_rerun_analysis_on_trace(self, tmp_path):
        cfg = write_config(tmp_path, QUAD_DEMO)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        code = cli.main(
            [
                "analyze",
                "--config", str(cfg),
                "--out", str(out),
                str(out / "cfg_trace.jsonl"),
            ]
        )
        assert code == 0
        rows = read_rows(out / "cfg_trace_analysis.csv")
        assert float(rows[0]["alpha_hat"]) == pytest.approx(0.5, abs=0.02)

    def test_missing_trace_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path, QUAD_DEMO)
        code = cli.main(
            ["analyze", "--config", str(cfg), "--out", str(tmp_path), "missing.jsonl"]
        )
        assert code == 1


class TestThreeDimensionalConfig:
    def test_dimension_3_problem_builds_and_runs(self, tmp_path):
        text = """
[problem]
kind = npbe
dimension = 3
resolution = 8
phi = 1:0.4

[flow]
kind = nominal
t_end = 4
record_every = 0.1
"""
        cfg = write_config(tmp_path, text)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        trace = traceio.read_trace(out / "cfg_trace.jsonl")
        assert trace.loss[-1] < trace.loss[0]


class TestManifestHash:
    def test_stable_under_key_reordering(self, tmp_path):
        from gradlab import config as config_mod

        a = write_config(
            tmp_path,
            "[problem]\nkind = quadratic\nphi = 1:0.5\nresolution = 64\n",
            "a.ini",
        )
        b = write_config(
            tmp_path,
            "[problem]\nresolution = 64\nphi = 1:0.5\nkind = quadratic\n",
            "b.ini",
        )
        ha = traceio.config_hash(config_mod.load_config(a).flat_pairs())
        hb = traceio.config_hash(config_mod.load_config(b).flat_pairs())
        assert ha == hb

    def test_grow_manifest_lists_every_output(self, tmp_path):
        cfg = write_config(tmp_path, GROW_DEMO)
        out = tmp_path / "out"
        assert cli.main(["grow", "--config", str(cfg), "--out", str(out)]) == 0
        manifest = json.loads((out / "cfg_manifest.json").read_text())
        emitted = {p.name for p in out.iterdir()} - {"cfg_manifest.json"}
        assert set(manifest["files"]) == emitted


class TestSeedOverride:
    def test_spectrum_seed_override_changes_draws(self, tmp_path):
        cfg = write_config(tmp_path, SPECTRUM_SINUSOID)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert cli.main(["spectrum", "--config", str(cfg), "--out", str(out1)]) == 0
        assert cli.main(
            ["spectrum", "--config", str(cfg), "--out", str(out2), "--seed", "99"]
        ) == 0
        a = (out1 / "cfg_spectrum.csv").read_bytes()
        b = (out2 / "cfg_spectrum.csv").read_bytes()
        assert a != b

    def test_annealed_seed_override(self, tmp_path):
        text = """
[problem]
kind = quadratic
resolution = 64
phi = 1:0.5

[architecture]
kind = sinusoid
a = 1
w0 = 0.0, 1.4, 0.05

[flow]
kind = annealed
t_end = 2
record_every = 0.5
seed = 3
noise_beta = 0.5
"""
        cfg = write_config(tmp_path, text)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out1)]) == 0
        assert cli.main(
            ["run", "--config", str(cfg), "--out", str(out2), "--seed", "4"]
        ) == 0
        a = (out1 / "cfg_trace.jsonl").read_bytes()
        b = (out2 / "cfg_trace.jsonl").read_bytes()
        assert a != b

    def test_annealed_requires_positive_beta(self, tmp_path, capsys):
        text = """
[problem]
kind = quadratic
resolution = 64
phi = 1:0.5

[architecture]
kind = sinusoid
a = 1
w0 = 0.0, 1.4, 0.05

[flow]
kind = annealed
t_end = 2
"""
        cfg = write_config(tmp_path, text)
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
        assert "noise_beta" in capsys.readouterr().err


class TestSpectrumExplicitSets:
    def test_explicit_w_sets(self, tmp_path):
        text = """
[architecture]
kind = spiral

[spectrum]
w = 1.0; 2.0; 3.0
"""
        cfg = write_config(tmp_path, text)
        out = tmp_path / "out"
        assert cli.main(["spectrum", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_rows(out / "cfg_spectrum.csv")
        assert [float(r["w0"]) for r in rows] == [1.0, 2.0, 3.0]

    def test_analyze_growth_segment(self, tmp_path):
        cfg = write_config(tmp_path, GROW_DEMO)
        out = tmp_path / "out"
        assert cli.main(["grow", "--config", str(cfg), "--out", str(out)]) == 0
        seg = out / "cfg_level2_trace.jsonl"
        assert seg.exists()
        code = cli.main(
            ["analyze", "--config", str(cfg), "--out", str(out), str(seg)]
        )
        assert code == 0
