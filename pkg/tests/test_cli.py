import json

import numpy as np
import pytest

from cathnav.cli import main
from cathnav.env import EnvConfig
from cathnav.forces import ForceSample, write_force_log
from cathnav.geometry import load_aorta
from cathnav.ppo import TrainConfig
from cathnav.runconfig import RunConfig, write_manifest


class TestGenArch:
    def test_manifest_roundtrip(self, tmp_path):
        out = tmp_path / "arch.json"
        assert main(["gen-arch", "--kind", "type2", "--out", str(out)]) == 0
        model = load_aorta(out)
        assert len(model.hulls) == 4 + 8 + 2 * 5


class TestTrain:
    def test_smoke_and_determinism(self, tmp_path):
        argv = ["train", "--arch", "corridor", "--target", "bca",
                "--obs", "internal", "--steps", "384", "--horizon", "128",
                "--seed", "7", "--quiet", "--log-interval", "64"]
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        assert main(argv + ["--out", str(out1)]) == 0
        assert main(argv + ["--out", str(out2)]) == 0
        c1 = (out1 / "curve.csv").read_bytes()
        c2 = (out2 / "curve.csv").read_bytes()
        assert c1 == c2 and len(c1) > 0
        assert (out1 / "checkpoint.npz").exists()
        assert (out1 / "manifest.json").exists()
        man = json.loads((out1 / "manifest.json").read_text())
        assert man["seed"] == 7 and "config_hash" in man

    def test_policy_observation_mismatch(self, tmp_path):
        argv = ["train", "--arch", "corridor", "--obs", "internal",
                "--policy", "cnn", "--steps", "10",
                "--out", str(tmp_path / "x"), "--quiet"]
        assert main(argv) == 2


class TestEval:
    def test_scripted_on_corridor(self, tmp_path, capsys):
        out = tmp_path / "ev"
        rc = main(["eval", "--arch", "corridor", "--scripted",
                   "--episodes", "3", "--max-steps", "2000",
                   "--out", str(out)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "Reward" in text and "Mean Force (N)" in text
        assert "Max Force (N)" in text and "Success %" in text
        rep = json.loads((out / "eval.json").read_text())
        assert rep["success_rate"] == 100.0

    def test_default_episodes_is_30(self):
        from cathnav.cli import build_parser
        args = build_parser().parse_args(["eval", "--scripted"])
        assert args.episodes == 30

    def test_missing_checkpoint(self, tmp_path):
        rc = main(["eval", "--arch", "corridor",
                   "--checkpoint", str(tmp_path / "nope.npz")])
        assert rc == 2


class TestReplay:
    def test_replay_bitwise(self, tmp_path):
        out = tmp_path / "logs"
        assert main(["eval", "--arch", "corridor", "--scripted",
                     "--episodes", "1", "--max-steps", "2000",
                     "--save-logs", "--out", str(out)]) == 0
        log = out / "episode_000.jsonl"
        assert log.exists()
        assert main(["replay", "--log", str(log)]) == 0

    def test_replay_detects_tampering(self, tmp_path):
        out = tmp_path / "logs"
        main(["eval", "--arch", "corridor", "--scripted", "--episodes", "1",
              "--max-steps", "2000", "--save-logs", "--out", str(out)])
        log = out / "episode_000.jsonl"
        lines = log.read_text().splitlines()
        rec = json.loads(lines[5])
        rec["reward"] += 1.0
        lines[5] = json.dumps(rec)
        log.write_text("\n".join(lines) + "\n")
        assert main(["replay", "--log", str(log)]) == 1


class TestValidateForces:
    def _write_log(self, path, n=200, mu=0.1, sigma=0.02, seed=3):
        rng = np.random.default_rng(seed)
        mags = np.abs(rng.normal(mu, sigma, n))
        samples = []
        for i, m in enumerate(mags):
            # split magnitude into a random direction triple
            v = rng.normal(size=3)
            v = v / np.linalg.norm(v) * m
            samples.append(ForceSample(0.004 * i, v[0], v[1], v[2],
                                       rng.uniform(-0.05, 0.05, 3), i % 30,
                                       i % 7))
        write_force_log(samples, path)
        return mags

    def test_report_files(self, tmp_path, capsys):
        log = tmp_path / "forces.csv"
        self._write_log(log)
        out = tmp_path / "val"
        rc = main(["validate-forces", "--log", str(log), "--mu", "0.1",
                   "--sigma", "0.02", "--seed", "5", "--out", str(out)])
        assert rc == 0
        rep = json.loads((out / "validation.json").read_text())
        for key in ("shapiro", "levene", "mann_whitney", "verdict"):
            assert key in rep
        txt = (out / "validation.txt").read_text()
        assert txt.index("Shapiro") < txt.index("Levene") < txt.index("Mann-Whitney")
        plot = (out / "plotdata.csv").read_text().splitlines()
        assert plot[0] == "x,kde_sim,kde_ref,cdf_sim,cdf_ref"
        assert len(plot) == 257

    def test_conflicting_ft_warns(self, tmp_path, capsys):
        log = tmp_path / "bad.csv"
        log.write_text("time_s,f_x,f_y,f_z,f_t,px,py,pz,link_id,hull_id\n"
                       + "\n".join(f"0.0,3.0,4.0,0.0,9.9,0,0,0,0,{i}"
                                   for i in range(10)) + "\n")
        rc = main(["validate-forces", "--log", str(log), "--mu", "5.0",
                   "--sigma", "1.0", "--out", str(tmp_path / "v")])
        out = capsys.readouterr().out
        assert out.count("warning:") == 10

    def test_empty_log_fails(self, tmp_path):
        log = tmp_path / "empty.csv"
        log.write_text("")
        rc = main(["validate-forces", "--log", str(log), "--mu", "0.1",
                   "--sigma", "0.02"])
        assert rc == 2


class TestRunConfig:
    def test_lossless_roundtrip(self, tmp_path):
        cfg = RunConfig(env=EnvConfig(arch_kind="type2", target="lcca",
                                      obs_kind="image", delta=0.009),
                        train=TrainConfig(total_steps=123, seed=9),
                        out_dir="runs/x")
        path = tmp_path / "cfg.json"
        cfg.save(path)
        cfg2 = RunConfig.load(path)
        assert cfg2.env == cfg.env
        assert cfg2.train == cfg.train
        assert cfg2.config_hash() == cfg.config_hash()

    def test_manifest_fields(self, tmp_path):
        cfg = RunConfig()
        path = write_manifest(tmp_path, cfg, ["a.csv"])
        man = json.loads(path.read_text())
        for key in ("config_hash", "seed", "code_version", "argv", "outputs"):
            assert key in man
