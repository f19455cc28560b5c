import json

from scene_sim.cli import main


def run_cli(args):
    return main([str(a) for a in args])


class TestRoundCommand:
    def test_default_run(self, tmp_path, capsys):
        assert run_cli(["round", "--seed", 7, "--out", tmp_path]) == 0
        out = capsys.readouterr().out
        assert "q_bar" in out
        assert (tmp_path / "config_resolved.json").exists()

    def test_deterministic_output(self, tmp_path, capsys):
        run_cli(["round", "--seed", 7, "--out", tmp_path / "a"])
        first = capsys.readouterr().out
        run_cli(["round", "--seed", 7, "--out", tmp_path / "b"])
        second = capsys.readouterr().out
        assert first == second

    def test_overrides_reflected_in_echo(self, tmp_path):
        run_cli([
            "round", "--seed", 1, "--out", tmp_path,
            "--snr-db", 10, "--s", 4, "--m", 4,
        ])
        echoed = json.loads((tmp_path / "config_resolved.json").read_text())
        assert echoed["round"]["snr_db"] == 10.0
        assert echoed["round"]["s"] == 4
        assert echoed["round"]["m"] == 4

    def test_unknown_key_is_fatal_and_named(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"round": {"antenas": 4}}))
        code = run_cli(["round", "--config", cfg, "--out", tmp_path])
        assert code == 1
        err = capsys.readouterr().err
        assert "antenas" in err

    def test_unknown_section_is_fatal(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"rounds": {}}))
        assert run_cli(["round", "--config", cfg, "--out", tmp_path]) == 1
        assert "rounds" in capsys.readouterr().err


class TestSweepCommand:
    def sweep_config(self, tmp_path):
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({
            "sweep": {
                "population": {"n_devices": 3},
                "labels": {"kind": "dirichlet", "num_classes": 4, "alpha": 0.3},
                "sm_pairs": [[2, 2]],
                "snr_db_values": [5.0],
                "channel_model": "diagonal",
                "trials": 2000,
            }
        }))
        return cfg

    def test_writes_csv(self, tmp_path):
        cfg = self.sweep_config(tmp_path)
        assert run_cli(["sweep", "--config", cfg, "--seed", 5, "--out", tmp_path]) == 0
        content = (tmp_path / "sweep.csv").read_text()
        assert content.startswith("S,M,snr_db,rho,model,estimator,class,")
        # header + K rows each for the raw and projected estimates
        assert len(content.splitlines()) == 1 + 2 * 4

    def test_byte_identical_reruns(self, tmp_path):
        cfg = self.sweep_config(tmp_path)
        run_cli(["sweep", "--config", cfg, "--seed", 5, "--out", tmp_path / "a"])
        run_cli(["sweep", "--config", cfg, "--seed", 5, "--out", tmp_path / "b"])
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == (
            tmp_path / "b" / "sweep.csv"
        ).read_bytes()

    def test_thread_flag_does_not_change_bytes(self, tmp_path):
        cfg = self.sweep_config(tmp_path)
        run_cli(["sweep", "--config", cfg, "--seed", 5, "--out", tmp_path / "t1",
                 "--threads", 1])
        run_cli(["sweep", "--config", cfg, "--seed", 5, "--out", tmp_path / "t4",
                 "--threads", 4])
        assert (tmp_path / "t1" / "sweep.csv").read_bytes() == (
            tmp_path / "t4" / "sweep.csv"
        ).read_bytes()

    def test_estimator_override(self, tmp_path):
        cfg = self.sweep_config(tmp_path)
        run_cli(["sweep", "--config", cfg, "--seed", 5, "--out", tmp_path,
                 "--estimator", "both"])
        content = (tmp_path / "sweep.csv").read_text()
        assert ",ratio," in content and ",scene," in content


class TestCrossoverCommand:
    def test_writes_grid(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "crossover": {
                "budgets": [100],
                "pilot_costs": [0, 25, 50, 75],
                "constant_pairs": [[1.0, 2.0]],
                "num_classes": 10,
            }
        }))
        assert run_cli(["crossover", "--config", cfg, "--out", tmp_path]) == 0
        lines = (tmp_path / "crossover.csv").read_text().splitlines()
        assert lines[0] == "B,P,c_coh,c_nc,mse_coh,mse_nc,scene_wins"
        rows = [line.split(",") for line in lines[1:]]
        wins = {int(r[1]): int(r[6]) for r in rows}
        # threshold at P = 50 for c_coh/c_nc = 0.5
        assert wins == {0: 0, 25: 0, 50: 1, 75: 1}

    def test_byte_identical(self, tmp_path):
        run_cli(["crossover", "--out", tmp_path / "a"])
        run_cli(["crossover", "--out", tmp_path / "b"])
        assert (tmp_path / "a" / "crossover.csv").read_bytes() == (
            tmp_path / "b" / "crossover.csv"
        ).read_bytes()

    def test_fitted_constant_replaces_configured(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "crossover": {
                "budgets": [100],
                "pilot_costs": [0, 50],
                "constant_pairs": [[1.0, 99.0]],
                "num_classes": 10,
                "estimate_c_nc": True,
                "sweep": {
                    "population": {"n_devices": 3},
                    "labels": {"kind": "dirichlet", "num_classes": 10, "alpha": 0.3},
                    "sm_pairs": [[1, 1], [2, 2], [4, 4]],
                    "snr_db_values": [5.0],
                    "channel_model": "diagonal",
                    "trials": 2000,
                },
            }
        }))
        assert run_cli(["crossover", "--config", cfg, "--seed", 4, "--out", tmp_path]) == 0
        assert "fitted c_nc" in capsys.readouterr().out
        rows = (tmp_path / "crossover.csv").read_text().splitlines()[1:]
        # the placeholder constant 99.0 must have been replaced by the fit
        assert all(float(r.split(",")[3]) < 1.0 for r in rows)


class TestFdCommand:
    def fd_config(self, tmp_path):
        cfg = tmp_path / "fd.json"
        cfg.write_text(json.dumps({
            "fd": {
                "clients": 3,
                "unlabeled_budget": 32,
                "pretrain_epochs": 5,
                "distill_epochs": 5,
                "round": {"num_classes": 10, "reps": 2, "antennas": 1},
                "snr_db": 5.0,
            }
        }))
        return cfg

    def test_writes_metrics(self, tmp_path):
        cfg = self.fd_config(tmp_path)
        assert run_cli(["fd", "--config", cfg, "--seed", 2, "--out", tmp_path]) == 0
        lines = (tmp_path / "fd_metrics.csv").read_text().splitlines()
        assert lines[0] == "round,U,S,M,snr_db,aggregation,server_acc,agg_l2_err,seed"
        assert len(lines) == 2

    def test_byte_identical(self, tmp_path):
        cfg = self.fd_config(tmp_path)
        run_cli(["fd", "--config", cfg, "--seed", 2, "--out", tmp_path / "a"])
        run_cli(["fd", "--config", cfg, "--seed", 2, "--out", tmp_path / "b"])
        assert (tmp_path / "a" / "fd_metrics.csv").read_bytes() == (
            tmp_path / "b" / "fd_metrics.csv"
        ).read_bytes()

    def test_snr_override(self, tmp_path):
        cfg = self.fd_config(tmp_path)
        run_cli(["fd", "--config", cfg, "--seed", 2, "--out", tmp_path,
                 "--snr-db", 10])
        echoed = json.loads((tmp_path / "config_resolved.json").read_text())
        assert echoed["fd"]["snr_db"] == 10.0
        assert ",10," in (tmp_path / "fd_metrics.csv").read_text().splitlines()[1]


class TestErrorPaths:
    def test_bad_json_exits_1(self, tmp_path, capsys):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{not json")
        assert run_cli(["sweep", "--config", cfg, "--out", tmp_path]) == 1
        assert "sweep" in capsys.readouterr().err

    def test_invalid_field_value(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"sweep": {"trials": 0}}))
        assert run_cli(["sweep", "--config", cfg, "--out", tmp_path]) == 1

    def test_wrong_type(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"sweep": {"trials": "many"}}))
        assert run_cli(["sweep", "--config", cfg, "--out", tmp_path]) == 1
        assert "trials" in capsys.readouterr().err
