import math

import pytest

from slabdg.cli import (StudyConfig, cmd_constants, cmd_dump_mesh,
                        cmd_study_adaptive, cmd_study_uniform, format_config,
                        main, parse_config, run_uniform_study, study_alpha)


class TestConstantsCommand:
    def test_first_rows(self):
        lines = cmd_constants(2).strip().splitlines()
        assert lines[0] == "k,C_ie,C_dt,alpha"
        k0 = lines[1].split(",")
        assert float(k0[1]) == 0.0
        assert float(k0[2]) == 1.0
        assert float(k0[3]) == 1.5
        k1 = lines[2].split(",")
        assert float(k1[1]) == pytest.approx(12.0)
        assert float(k1[2]) == pytest.approx(7.92820323, rel=1e-8)
        assert float(k1[3]) == pytest.approx(8.42820323, rel=1e-8)

    def test_monotone_columns(self):
        lines = cmd_constants(6).strip().splitlines()[1:]
        cie = [float(l.split(",")[1]) for l in lines]
        cdt = [float(l.split(",")[2]) for l in lines]
        alpha = [float(l.split(",")[3]) for l in lines]
        for col in (cie, cdt, alpha):
            assert all(b >= a for a, b in zip(col, col[1:]))


class TestConfig:
    def test_round_trip_defaults(self):
        config = StudyConfig()
        assert parse_config(format_config(config)) == config

    def test_round_trip_modified(self):
        config = StudyConfig(case="line_discontinuity", k_z=2, k_mu=2, lam=-1.0,
                             levels=3, refinements=2, max_dofs=123,
                             estimator="averaging", theta=0.3, tol=2.5e-9,
                             alpha=4.25, max_seconds=1.5, out_dir="elsewhere")
        assert parse_config(format_config(config)) == config

    def test_comments_and_blank_lines(self):
        text = "# a comment\ncase = smooth\n\nk_z = 2  # trailing\n"
        config = parse_config(text)
        assert config.case == "smooth"
        assert config.k_z == 2

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown key"):
            parse_config("wibble = 3\n")

    def test_validation(self):
        with pytest.raises(ValueError):
            StudyConfig(case="nope")
        with pytest.raises(ValueError):
            StudyConfig(lam=2.0)
        with pytest.raises(ValueError):
            StudyConfig(theta=0.0)
        with pytest.raises(ValueError):
            StudyConfig(tol=-1.0)
        with pytest.raises(ValueError):
            StudyConfig(estimator="nope")


class TestDumpMesh:
    def test_lines_and_order(self):
        text = cmd_dump_mesh(1.0, 2)
        lines = text.strip().splitlines()
        assert len(lines) == 16
        ids = [int(l.split()[0]) for l in lines]
        assert ids == sorted(ids)

    def test_cli_roundtrip(self, tmp_path, capsys):
        out = tmp_path / "mesh.txt"
        assert main(["dump-mesh", "--levels", "1", "--out", str(out)]) == 0
        assert len(out.read_text().strip().splitlines()) == 4
        assert main(["dump-mesh", "--levels", "1"]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 4


@pytest.mark.filterwarnings("ignore::UserWarning")
class TestUniformStudy:
    def test_rows_and_rates(self):
        config = StudyConfig(case="smooth", k_z=0, k_mu=0, refinements=2,
                             levels=2)
        result = run_uniform_study(config)
        assert len(result.rows) == 3
        ns = [r["N"] for r in result.rows]
        assert ns == [16, 64, 256]
        # reference values through the study path
        assert result.rows[0]["error_t"] == pytest.approx(7.07e-2, rel=0.02)
        assert result.rows[0]["error_l2"] == pytest.approx(2.02e-2, rel=0.05)
        # first-order scheme: energy rate about 1
        rate = math.log2(result.rows[1]["error_t"] / result.rows[2]["error_t"])
        assert rate == pytest.approx(1.0, abs=0.15)

    def test_csv_written_and_deterministic(self, tmp_path):
        config = StudyConfig(case="smooth", k_z=0, k_mu=0, refinements=1,
                             out_dir=str(tmp_path))
        path = cmd_study_uniform(config)
        first = path.read_bytes()
        assert path.read_text().startswith("N,dofs,error_Vh,error_L2,rate_Vh,rate_L2,iterations")
        path2 = cmd_study_uniform(config)
        assert path2 == path
        assert path.read_bytes() == first
        solves = tmp_path / path.name.replace("uniform_", "solves_")
        assert solves.exists()
        assert solves.read_text().startswith("case,k_z,k_mu,N,dofs,iterations")

    def test_time_budget_truncates(self, tmp_path):
        config = StudyConfig(case="smooth", k_z=0, k_mu=0, refinements=6,
                             max_seconds=0.0, out_dir=str(tmp_path))
        result = run_uniform_study(config)
        assert result.truncated
        assert list(result.csv_lines())[-1].startswith("# truncated")

    def test_dump_matrix_flag(self, tmp_path):
        config = StudyConfig(case="smooth", k_z=0, k_mu=0, refinements=0,
                             out_dir=str(tmp_path))
        target = tmp_path / "matrix.txt"
        cmd_study_uniform(config, dump_matrix=str(target))
        row, col, val = target.read_text().split("\n")[0].split()
        int(row), int(col), float(val)


@pytest.mark.filterwarnings("ignore::UserWarning")
class TestAdaptiveStudy:
    def test_outputs(self, tmp_path):
        config = StudyConfig(case="point_singularity", k_z=0, k_mu=0,
                             estimator="p_hier", max_dofs=300,
                             out_dir=str(tmp_path))
        path = cmd_study_adaptive(config)
        text = path.read_text()
        assert text.startswith("step,N,dofs,error_brokenH1,error_L2,estimator,theta,kind")
        n_steps = len(text.strip().splitlines()) - 1
        meshes = sorted(tmp_path.glob("mesh_*_step*.txt"))
        assert len(meshes) == n_steps
        assert (tmp_path / path.name.replace("adaptive_", "curve_").replace(
            ".csv", "_error.dat")).exists()
        curves = sorted(tmp_path.glob("curve_*.dat"))
        assert len(curves) == 3  # error, estimator, reference

    def test_byte_identical_rerun(self, tmp_path):
        config = StudyConfig(case="line_discontinuity", k_z=0, k_mu=0,
                             estimator="averaging", max_dofs=200,
                             out_dir=str(tmp_path))
        path = cmd_study_adaptive(config)
        first = path.read_bytes()
        assert cmd_study_adaptive(config).read_bytes() == first

    def test_mismatched_degrees_rejected(self, tmp_path):
        config = StudyConfig(case="point_singularity", k_z=0, k_mu=1,
                             estimator="p_hier", max_dofs=100,
                             out_dir=str(tmp_path))
        with pytest.raises(ValueError):
            cmd_study_adaptive(config)


class TestMain:
    def test_constants_exit_zero(self, capsys):
        assert main(["constants", "--kmax", "2"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("k,C_ie,C_dt,alpha")

    def test_error_exit_nonzero(self, capsys):
        code = main(["study", "uniform", "--case", "smooth", "--theta", "7"])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_study_uniform_via_flags(self, tmp_path, capsys):
        code = main(["study", "uniform", "--case", "smooth", "--k-z", "0",
                     "--k-mu", "0", "--refinements", "0",
                     "--out-dir", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "uniform_smooth_kz0_kmu0_lam1.csv").exists()

    def test_config_file_with_overrides(self, tmp_path):
        cfg = tmp_path / "study.cfg"
        cfg.write_text(format_config(StudyConfig(case="smooth", k_z=0, k_mu=0,
                                                 refinements=0)))
        code = main(["study", "uniform", "--config", str(cfg),
                     "--out-dir", str(tmp_path)])
        assert code == 0


class TestStudyAlpha:
    def test_values(self):
        assert study_alpha(0) == pytest.approx(1.5)
        assert study_alpha(1) == pytest.approx(1.5 + math.sqrt(12.0))
