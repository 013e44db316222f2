import math
import os

import numpy as np
import pytest

from geodescent.cli import main as cli_main
from geodescent.harness import (
    ConfigError,
    ExperimentConfig,
    burer_monteiro_instance,
    burer_monteiro_start,
    describe_thresholds,
    parse_config,
    principal_angles,
    read_matrix,
    run_experiment,
    write_matrix,
)

MINIMAL_SPHERE = """
experiment = sphere-quadratic
seed = 7
diag = 1, -1, 4
epsilon = 1e-4
"""


class TestParseConfig:
    def test_minimal_valid(self):
        cfg = parse_config(MINIMAL_SPHERE)
        assert cfg.experiment == "sphere-quadratic"
        assert cfg.seed == 7
        assert cfg.diag == [1.0, -1.0, 4.0]

    def test_missing_seed_named(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("experiment = sphere-quadratic\ndiag = 1,-1,4\n")
        assert any("seed" in e for e in exc.value.errors)

    def test_all_errors_reported_with_line_numbers(self):
        text = "experiment = bogus\nwhatkey = 3\nseed = not-a-number\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        errors = exc.value.errors
        assert len(errors) >= 3
        assert any("line 2" in e and "whatkey" in e for e in errors)
        assert any("line 3" in e for e in errors)

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL_SPHERE + "seed = 9\n")
        assert any("duplicate" in e for e in exc.value.errors)

    def test_kpca_needs_exactly_one_h_source(self):
        base = "experiment = kpca\nseed = 1\nk = 3\n"
        with pytest.raises(ConfigError):
            parse_config(base)
        with pytest.raises(ConfigError):
            parse_config(base + "h_diag = 0,1,2\nh_file = h.txt\n")
        cfg = parse_config(base + "h_diag = 0,1,2,3,4\n")
        assert cfg.k == 3

    def test_theory_mode_requires_constants(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL_SPHERE + "mode = theory\n")
        joined = " ".join(exc.value.errors)
        assert "f_gap" in joined and "beta" in joined

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# header\n\nexperiment = sphere-quadratic # inline\nseed = 1\ndiag = 1,2\n")
        assert cfg.seed == 1


class TestMatrixIO:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((4, 3)) * 1e3
        path = str(tmp_path / "m.txt")
        write_matrix(path, m)
        back = read_matrix(path)
        assert np.array_equal(back, m)
        with open(path) as fh:
            assert fh.readline().strip() == "4 3"

    def test_bad_header(self, tmp_path):
        path = str(tmp_path / "bad.txt")
        with open(path, "w") as fh:
            fh.write("3 3\n1 2 3\n")
        with pytest.raises(ValueError, match="expected 9 entries"):
            read_matrix(path)


class TestBurerMonteiroPieces:
    def test_start_pattern_matches_block_layout(self):
        y0 = burer_monteiro_start(100, 20)
        # rows 5j-4..5j (1-indexed) carry a 1 in column j
        for j in range(20):
            for i in range(5 * j, 5 * j + 5):
                assert y0[i, j] == 1.0
        assert np.all(np.sum(y0, axis=1) == 1.0)
        assert np.allclose(np.linalg.norm(y0, axis=1), 1.0)

    def test_instance_symmetric_block_only(self):
        a = burer_monteiro_instance(100, 20, 5, np.random.default_rng(3))
        assert np.array_equal(a, a.T)
        assert np.any(a[:5, :5] != 0)
        assert not np.any(a[5:, :])
        assert not np.any(a[:, 5:])


class TestRunExperiment:
    def test_sphere_quadratic_writes_artifacts(self, tmp_path):
        cfg = parse_config(MINIMAL_SPHERE)
        out = run_experiment(cfg, out_dir=str(tmp_path / "o"))
        assert out.exit_code == 0
        assert out.status == "second-order-point"
        assert out.classification == "second-order"
        trace = (tmp_path / "o" / "trace.csv").read_text().splitlines()
        assert trace[0] == "t,f,gradnorm,step_norm,perturbed,dist_to_start"
        assert len(trace) == out.summary["iterations"] + 1
        summary = (tmp_path / "o" / "summary.txt").read_text()
        assert "classification = second-order" in summary
        assert "seed = 7" in summary
        final = read_matrix(str(tmp_path / "o" / "final_point.txt"))
        assert final.shape == (1, 3)

    def test_figure_one_start_is_default(self, tmp_path):
        # default x0 is e1, the exact saddle of the Figure-1 instance
        cfg = parse_config(MINIMAL_SPHERE)
        out = run_experiment(cfg, out_dir=str(tmp_path / "o"))
        assert abs(out.summary["final_f"] - (-1.0)) <= 1e-6

    def test_infeasible_start_exits_2(self, tmp_path):
        cfg = parse_config(MINIMAL_SPHERE + "x0 = 1, 1, 0\n")
        out = run_experiment(cfg, out_dir=str(tmp_path / "o"))
        assert out.exit_code == 2
        assert any("infeasible" in m for m in out.messages)

    def test_iteration_cap_exits_1(self, tmp_path):
        cfg = parse_config(MINIMAL_SPHERE + "max_iters = 5\n")
        out = run_experiment(cfg, out_dir=str(tmp_path / "o"))
        assert out.exit_code == 1
        assert out.status == "iteration-cap"

    def test_bit_identical_reruns(self, tmp_path):
        cfg = parse_config(MINIMAL_SPHERE)
        run_experiment(cfg, out_dir=str(tmp_path / "a"))
        run_experiment(cfg, out_dir=str(tmp_path / "b"))
        for name in ("trace.csv", "summary.txt", "final_point.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_override_changes_trace(self, tmp_path):
        cfg = parse_config(MINIMAL_SPHERE)
        run_experiment(cfg, out_dir=str(tmp_path / "a"))
        run_experiment(cfg, out_dir=str(tmp_path / "b"), seed=8)
        assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "b" / "trace.csv").read_bytes()

    def test_kpca_from_file_with_symmetry_audit(self, tmp_path):
        h = np.diag([0.0, 1.0, 2.0, 3.0, 4.0])
        h_path = str(tmp_path / "h.txt")
        write_matrix(h_path, h)
        cfg = parse_config(f"experiment = kpca\nseed = 3\nk = 3\nh_file = {h_path}\n")
        out = run_experiment(cfg, out_dir=str(tmp_path / "o"))
        assert out.exit_code == 0
        assert out.summary["final_f"] <= -4.5 + 1e-6
        assert out.summary["principal_angle_max"] <= 1e-3

        bad = h.copy()
        bad[0, 1] = 1e-6  # asymmetric beyond the 1e-12 audit
        bad_path = str(tmp_path / "bad.txt")
        write_matrix(bad_path, bad)
        cfg2 = parse_config(f"experiment = kpca\nseed = 3\nk = 3\nh_file = {bad_path}\n")
        out2 = run_experiment(cfg2, out_dir=str(tmp_path / "o2"))
        assert out2.exit_code == 2
        assert any("symmetric" in m for m in out2.messages)

    def test_burer_monteiro_small_instance(self, tmp_path):
        cfg = parse_config(
            "experiment = burer-monteiro\nseed = 5\ndim_d = 12\np = 4\nblock = 3\n"
            "epsilon = 1e-3\n")
        out = run_experiment(cfg, out_dir=str(tmp_path / "o"))
        assert out.summary["grad0_norm"] <= 1e-10
        assert out.exit_code == 0
        assert out.summary["final_f"] < out.summary["f0"] - 1e-3

    def test_verify_mode_writes_reports(self, tmp_path):
        cfg = parse_config(
            "experiment = verify\nseed = 11\nmanifold = sphere\nn = 3\n"
            "n_samples = 120\nchecks = two-step, holonomy\n")
        out = run_experiment(cfg, out_dir=str(tmp_path / "v"))
        assert out.exit_code == 0
        assert {r.lemma_id for r in out.reports} == {"two-step", "holonomy"}
        assert (tmp_path / "v" / "report_two-step.txt").exists()
        assert (tmp_path / "v" / "report_holonomy.txt").exists()


class TestDescribeThresholds:
    def test_practical_fields_present(self):
        cfg = parse_config(MINIMAL_SPHERE)
        text = describe_thresholds(cfg)
        for key in ("beta_hat", "rho_hat", "eta", "g_thres", "f_thres", "t_thres", "r"):
            assert f"{key} = " in text

    def test_theory_mode_uses_box_formulas(self):
        cfg = parse_config(
            "experiment = sphere-quadratic\nseed = 7\ndiag = 1,-1,4\n"
            "mode = theory\nbeta = 8\nrho = 8\nf_gap = 2\nepsilon = 0.1\n")
        text = describe_thresholds(cfg)
        assert "mode = theory" in text
        assert "chi = " in text


class TestCli:
    def test_run_subcommand(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        cfg_path.write_text(MINIMAL_SPHERE)
        code = cli_main(["run", str(cfg_path), "--out", str(tmp_path / "o")])
        out = capsys.readouterr().out
        assert code == 0
        assert "classification = second-order" in out

    def test_config_errors_exit_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        cfg_path.write_text("experiment = sphere-quadratic\n")
        code = cli_main(["run", str(cfg_path)])
        err = capsys.readouterr().err
        assert code == 2
        assert "seed" in err

    def test_missing_file_exit_2(self, capsys):
        assert cli_main(["run", "/nonexistent/cfg.txt"]) == 2

    def test_verify_subcommand_requires_verify_config(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        cfg_path.write_text(MINIMAL_SPHERE)
        assert cli_main(["verify", str(cfg_path)]) == 2

    def test_thresholds_subcommand(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        cfg_path.write_text(MINIMAL_SPHERE)
        assert cli_main(["thresholds", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "eta = " in out


def test_principal_angles_identity():
    x = np.eye(5)[:, :3]
    assert np.allclose(principal_angles(x, x), 0.0)
    y = np.eye(5)[:, [2, 3, 4]]
    ang = principal_angles(x, y)
    assert np.max(ang) == pytest.approx(math.pi / 2)
