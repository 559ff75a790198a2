"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one [PASS] line on success (run with ``pytest -s`` to see
them); a failed criterion fails its test.  The two learning experiments
dominate the runtime (roughly ten minutes together).
"""

import json
import time

import numpy as np
import pytest
import torch

from cathnav import chain
from cathnav.chain import CatheterSpec, catheter_model, forward_dynamics
from cathnav.contacts import ContactParams, solve_contact_forces, tangent_basis
from cathnav.env import CathNavEnv, EnvConfig, reward, run_episode
from cathnav.forces import (accumulate_heatmap, episode_force_stats,
                            force_magnitude, read_force_log)
from cathnav.geometry import AortaModel, ConvexHull, sample_surface_points
from cathnav.ppo import (GaussianPolicy, PolicySpec, TrainConfig, compute_gae,
                         evaluate, normalize_advantages, ppo_loss, train,
                         write_curve_csv)
from cathnav.stats import (levene, mann_whitney_u, shapiro_wilk,
                           validate_against_normal)

from oracles import OracleChain, gae_direct
from test_stats import (BIMODAL, BIMODAL_REF, FIX30, FIX30_REF, LEV_A, LEV_B,
                        LEV_REF, brute_force_u)


def ok(name):
    print(f"\n[PASS] {name}")


def unit_scale_spec(n_links):
    return CatheterSpec(n_links=n_links, n_tip=n_links - 1, link_length=0.4,
                        link_radius=0.03, link_mass=1.3, joint_damping=0.2,
                        joint_stiffness=1.7, joint_limit=2.0,
                        insertion_gain=0.5, torque_gain=1.0, servo_gain=3.0,
                        insertion_range=(-1.0, 1.0))


class TestDynamicsOracle:
    def test_forward_dynamics_vs_lagrangian_oracle(self):
        # 1-4 link chains, 100 random states total, relative error < 1e-6.
        worst = 0.0
        for n_links in (1, 2, 3, 4):
            spec = unit_scale_spec(n_links)
            model = catheter_model(spec)
            oracle = OracleChain.from_model(model)
            rng = np.random.default_rng(1000 + n_links)
            for _ in range(25):
                q = rng.uniform(-0.3, 0.3, spec.nq)
                qd = rng.uniform(-1.5, 1.5, spec.nq)
                tau = rng.uniform(-1.0, 1.0, spec.nq)
                wr = rng.uniform(-1.0, 1.0, (spec.n_links, 6))
                st = chain.ChainState(q, qd)
                got = forward_dynamics(spec, st, tau, wr)
                want = oracle.forward_dynamics(q, qd, tau, wr)
                err = np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-9)
                worst = max(worst, err)
                assert err < 1e-6
        ok(f"dynamics oracle: 100 random states on 1-4 link chains, "
           f"max rel err {worst:.2e} < 1e-6")

    def test_pendulum_period(self):
        m, L, g = 0.9, 0.6, 9.81
        model = chain.ChainModel(
            [chain.J_REVOLUTE_Y], [np.zeros(3)], [m], [[L / 2, 0.0, 0.0]],
            [np.diag([1e-12, m * L**2 / 12, m * L**2 / 12])],
            damping=[0.0], stiffness=[0.0], qlim_lo=[-np.inf],
            qlim_hi=[np.inf], gravity=[0.0, 0.0, -g])
        dt = 1e-3
        q = np.array([np.pi / 2 + 0.01])
        qd = np.zeros(1)
        crossings = []
        prev = q[0] - np.pi / 2
        for k in range(40000):
            q, qd = chain._step_arrays(model, q, qd, np.zeros(1),
                                       np.zeros((1, 6)), dt)
            cur = q[0] - np.pi / 2
            if prev < 0.0 <= cur:
                crossings.append((k + prev / (prev - cur)) * dt)
            prev = cur
            if len(crossings) >= 10:
                break
        T_meas = float(np.mean(np.diff(crossings)))
        T_ref = 2 * np.pi * np.sqrt(2 * L / (3 * g))
        rel = abs(T_meas - T_ref) / T_ref
        assert rel < 0.01
        ok(f"pendulum period within {rel * 100:.3f}% of 2*pi*sqrt(2L/3g)")


class TestContactInvariants:
    def test_friction_cone_on_10000_contacts(self):
        from cathnav.contacts import Contact
        params = ContactParams()
        rng = np.random.default_rng(99)
        n = rng.normal(size=(10000, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        contacts = []
        for i in range(10000):
            t1, t2 = tangent_basis(n[i])
            contacts.append(Contact(np.zeros(3), n[i], t1, t2,
                                    float(rng.uniform(-0.005, 0.001)), 0, 0))
        vels = rng.normal(scale=0.3, size=(10000, 3))
        forces = solve_contact_forces(contacts, vels, params=params)
        viol = 0
        for f in forces:
            if f.f_z < 0.0:
                viol += 1
            if np.hypot(f.f_x, f.f_y) > params.friction * f.f_z + 1e-12:
                viol += 1
        assert viol == 0
        ok("friction cone satisfied on 10,000 solved contacts (tol 1e-12)")

    def test_resting_penetration_under_1mm(self):
        from cathnav.geometry import ArchParams
        cfg = EnvConfig(arch_kind="corridor", obs_kind="internal",
                        max_steps=10000, seed=3, gravity=(0.0, 0.0, -9.81),
                        arch_params=ArchParams(corridor_length=0.30,
                                               corridor_segments=14))
        env = CathNavEnv(cfg)
        env.reset(seed=0)
        env.state.q[0] = 0.165
        for _ in range(1200):
            env.step(np.zeros(21))
        cts = env.contacts()
        assert cts
        worst = min(c.distance for c in cts)
        assert worst > -0.001
        ok(f"resting penetration {-worst * 1000:.2f} mm < 1 mm at default k, c")

    def test_no_tunneling_1000_randomized_insertions(self):
        rng = np.random.default_rng(0)
        env = CathNavEnv(EnvConfig(arch_kind="type2", target="bca",
                                   obs_kind="internal", max_steps=10000))
        violations = 0
        for trial in range(1000):
            env.reset(seed=trial)
            env.state.q[0] = 0.05 + 0.05 * (trial % 7) / 7.0
            inside_prev = env.tip_inside_lumen()
            a = np.zeros(21)
            a[20] = 1.0  # maximum insertion speed throughout
            for _ in range(30):
                a[:20] = rng.uniform(-1, 1, 20)
                res = env.step(a)
                inside = env.tip_inside_lumen()
                if inside_prev and not inside:
                    violations += 1
                inside_prev = inside
                if res.terminated or res.truncated:
                    break
        assert violations == 0
        ok("zero tunneling events in 1000 randomized max-speed insertions")


class TestFormulaExactness:
    def test_reward_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            h = rng.normal(size=3)
            g = rng.normal(size=3)
            d = float(np.linalg.norm(h - g))
            want = 10.0 if d <= 0.008 else -d
            assert abs(reward(h, g, 0.008, 10.0) - want) <= 1e-12
        # boundary d = delta returns the bonus
        assert reward([0.008, 0, 0], [0, 0, 0], 0.008, 10.0) == 10.0
        ok("reward matches direct formula on 1000 random inputs; "
           "boundary d = delta pays +10")

    def test_magnitude_formula(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            f = rng.normal(size=3)
            want = float(np.sqrt(f[0] ** 2 + f[1] ** 2 + f[2] ** 2))
            assert abs(force_magnitude(*f) - want) <= 1e-12
        ok("force magnitude matches sqrt(fx^2+fy^2+fz^2) on 1000 inputs")

    def test_episode_stats_formula(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            mags = rng.uniform(0, 2, rng.integers(1, 50))
            f_max, f_mean = episode_force_stats(list(mags))
            assert abs(f_max - np.max(mags)) <= 1e-12
            assert abs(f_mean - np.sum(mags) / len(mags)) <= 1e-12
        assert episode_force_stats([]) == (0.0, 0.0)
        ok("episode force stats match direct max/mean on 1000 inputs")


class TestDeterminism:
    def test_episode_log_bitwise(self, tmp_path):
        import concurrent.futures as cf
        cfg = EnvConfig(arch_kind="type1", target="bca", obs_kind="internal",
                        max_steps=120, seed=5)
        rng = np.random.default_rng(11)
        actions = [np.clip(rng.normal(size=21), -1, 1) for _ in range(120)]

        def run(tag, seed=17):
            path = tmp_path / f"{tag}.jsonl"
            run_episode(cfg, actions, seed=seed, log_path=path)
            return path.read_bytes()

        ref = run("ref")
        again = run("again")
        assert ref == again
        with cf.ThreadPoolExecutor(max_workers=8) as ex:
            futures = [ex.submit(run, f"t{i}", 17) for i in range(8)]
            results = [f.result() for f in futures]
        assert all(r == ref for r in results)
        ok("episode log bitwise identical across runs and 1 vs 8 threads")


class TestThroughput:
    def _measure(self, obs_kind):
        cfg = EnvConfig(arch_kind="type1", target="bca", obs_kind=obs_kind,
                        max_steps=100000, seed=0)
        env = CathNavEnv(cfg)
        env.reset()
        a = np.zeros(21)
        a[20] = 1.0
        for _ in range(50):   # warmup (JIT already cached, contacts vary)
            env.step(a)
        env.reset()
        t0 = time.perf_counter()
        for _ in range(10000):
            res = env.step(a)
            if res.terminated or res.truncated:
                env.reset()
        return 10000 / (time.perf_counter() - t0)

    def test_internal_throughput(self):
        t0 = time.perf_counter()
        rate = self._measure("internal")
        assert rate >= 80.0
        assert time.perf_counter() - t0 < 300.0
        ok(f"internal observations: {rate:.0f} env steps/s >= 80")

    def test_image_throughput(self):
        t0 = time.perf_counter()
        rate = self._measure("image")
        assert rate >= 60.0
        assert time.perf_counter() - t0 < 300.0
        ok(f"image observations: {rate:.0f} env steps/s >= 60")


class TestStatisticsOracles:
    def test_mann_whitney_exhaustive(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = rng.integers(0, 12, rng.integers(1, 31)).astype(float)
            b = rng.integers(0, 12, rng.integers(1, 31)).astype(float)
            u, _ = mann_whitney_u(a, b)
            assert u == brute_force_u(a, b)
        ok("Mann-Whitney U equals exhaustive pair counting on 200 cases")

    def test_frozen_reference_fixtures(self):
        w, p = shapiro_wilk(FIX30)
        assert abs(w - FIX30_REF[0]) < 1e-3 and abs(p - FIX30_REF[1]) < 1e-3
        w2, p2 = shapiro_wilk(BIMODAL)
        assert abs(w2 - BIMODAL_REF[0]) < 1e-3 and abs(p2 - BIMODAL_REF[1]) < 1e-3
        ls, lp = levene(LEV_A, LEV_B)
        assert abs(ls - LEV_REF[0]) < 1e-6 and abs(lp - LEV_REF[1]) < 1e-6
        ok("Shapiro-Wilk within 1e-3 and Levene within 1e-6 of frozen "
           "reference fixtures")

    def test_monte_carlo_level(self):
        passed = 0
        for trial in range(100):
            rng = np.random.default_rng(5000 + trial)
            sim = rng.normal(0.12, 0.025, 500)
            rep = validate_against_normal(sim, 0.12, 0.025, seed=trial)
            if rep.mann_whitney[1] > 0.05:
                passed += 1
        assert passed >= 90
        ok(f"same-distribution inputs gave p > 0.05 in {passed}/100 trials")


class TestPpoChecks:
    def test_gradient_check(self):
        torch.manual_seed(0)
        policy = GaussianPolicy(PolicySpec("mlp", (4,), action_dim=2,
                                           hidden=8)).double()
        rng = np.random.default_rng(3)
        n = 12
        obs = torch.as_tensor(rng.normal(size=(n, 4)))
        actions = torch.as_tensor(rng.normal(size=(n, 2)))
        with torch.no_grad():
            mean, std, _ = policy.distribution(obs)
            logp = policy.log_prob(mean, std, actions)
        batch = {"obs": obs, "actions": actions,
                 "old_log_prob": logp - 0.07,
                 "advantages": torch.as_tensor(
                     normalize_advantages(rng.normal(size=n))),
                 "returns": torch.as_tensor(rng.normal(size=n))}

        def loss_value():
            total, _ = ppo_loss(policy, batch, clip=0.2, vf_coef=0.5,
                                ent_coef=0.01)
            return total

        total = loss_value()
        policy.zero_grad()
        total.backward()
        h = 1e-6
        worst = 0.0
        for p in policy.parameters():
            g = p.grad.detach().numpy().ravel()
            flat = p.detach().numpy().ravel()
            for idx in range(0, flat.size, max(1, flat.size // 6)):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = float(loss_value())
                flat[idx] = orig - h
                lm = float(loss_value())
                flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                rel = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8)
                worst = max(worst, rel)
                assert rel < 1e-4
        ok(f"PPO gradients match central differences, max rel err {worst:.2e}")

    def test_gae_direct_summation(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(50):
            T = 50
            r = rng.normal(size=T)
            v = rng.normal(size=T)
            d = (rng.uniform(size=T) < 0.1).astype(float)
            boot = float(rng.normal())
            adv, _ = compute_gae(r, v, d, 0.99, 0.95, boot)
            adv_o, _ = gae_direct(r, v, d, boot, 0.99, 0.95)
            worst = max(worst, float(np.max(np.abs(adv - adv_o))))
            assert np.allclose(adv, adv_o, atol=1e-10)
        ok(f"GAE matches direct summation, max abs err {worst:.2e} < 1e-10")


class TestHeatmapConservation:
    def test_accelerated_equals_bruteforce_exactly(self):
        from cathnav.forces import ForceSample
        rng = np.random.default_rng(17)
        pts = rng.uniform(-1, 1, (500, 3))
        h = ConvexHull(np.array([[x, y, z] for x in (-2.0, 2.0)
                                 for y in (-2.0, 2.0) for z in (-2.0, 2.0)]))
        model = AortaModel([h], {"start": np.zeros(3),
                                 "bca_target": np.zeros(3),
                                 "lcca_target": np.zeros(3)},
                           np.array([0, 1.0, 0]), "external")
        model.surface_points = pts
        samples = [ForceSample(0.0, *rng.normal(size=3),
                               rng.uniform(-1, 1, 3), 0, 0)
                   for _ in range(10000)]
        radius = 0.15
        hm = accumulate_heatmap(samples, model, radius)
        want = np.zeros(len(pts))
        r2 = radius * radius
        pos = np.asarray([s.position for s in samples])
        mag = np.asarray([s.magnitude for s in samples])
        for p_idx in range(len(pts)):
            tot = 0.0
            cnt = 0
            for s_idx in range(len(samples)):
                d = pts[p_idx] - pos[s_idx]
                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2:
                    tot += mag[s_idx]
                    cnt += 1
            if cnt:
                want[p_idx] = tot / cnt
        assert np.array_equal(hm.values, want)
        ok("accelerated heatmap equals brute-force pairing exactly on "
           "10,000 samples")


class TestLearningExperiments:
    def test_corridor_learning(self, tmp_path):
        # Corridor, MLP policy, 100k steps; final 100-episode mean reward
        # >= 1.5x the first 100-episode mean, success >= 80%, under 30 min.
        t0 = time.perf_counter()
        env_cfg = EnvConfig(arch_kind="corridor", target="bca",
                            obs_kind="internal", max_steps=600, seed=0)
        res = train(env_cfg, config=TrainConfig(total_steps=100_000, seed=0,
                                                log_interval=500))
        elapsed = time.perf_counter() - t0
        rets = np.asarray(res.episode_returns)
        succ = np.asarray(res.episode_successes)
        assert len(rets) >= 200
        first = rets[:100].mean()
        final = rets[-100:].mean()
        success = succ[-100:].mean() * 100.0
        assert elapsed < 1800.0
        assert final >= 1.5 * first
        assert success >= 80.0
        write_curve_csv(res.curve, tmp_path / "corridor_curve.csv")
        ok(f"corridor 100k steps in {elapsed:.0f}s: first-100 mean "
           f"{first:.1f}, final-100 mean {final:.1f}, success {success:.0f}%")

    def test_type2_bca_internal_learning(self, tmp_path):
        # Type-II arch, BCA target, internal observations, 200k steps:
        # success strictly greater than the always-zero baseline (0%),
        # with the training curve in mean-reward-of-last-100-steps format.
        t0 = time.perf_counter()
        env_cfg = EnvConfig(arch_kind="type2", target="bca",
                            obs_kind="internal", max_steps=2000, seed=0)
        res = train(env_cfg, config=TrainConfig(total_steps=200_000, seed=0,
                                                log_interval=1000))
        elapsed = time.perf_counter() - t0
        curve_path = tmp_path / "type2_bca_curve.csv"
        write_curve_csv(res.curve, curve_path)
        lines = curve_path.read_text().splitlines()
        assert lines[0] == "step,mean_reward_100"
        assert len(lines) > 100
        rep = evaluate(res.policy, env_cfg, n_episodes=30,
                       normalizer=res.normalizer)
        zero_baseline = 0.0
        assert rep.success_rate > zero_baseline
        ok(f"type-2 BCA 200k steps in {elapsed:.0f}s: eval success "
           f"{rep.success_rate:.0f}% > always-zero baseline 0%; curve with "
           f"{len(lines) - 1} mean-reward-of-last-100-steps rows")


class TestTeleopRoundTrip:
    def test_scripted_websocket_session(self, tmp_path, capsys):
        # [SECONDARY] reset + 200 command ticks; step indices advance
        # monotonically; the recorded CSV passes validate-forces with zero
        # warnings.
        from starlette.testclient import TestClient
        from cathnav.cli import main
        from cathnav.teleop import make_app
        cfg = EnvConfig(arch_kind="corridor", target="bca",
                        obs_kind="internal", max_steps=100000, seed=1)
        app = make_app(cfg, tick_rate=500.0, record_dir=tmp_path)
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                hello = ws.receive_json()
                assert hello["type"] == "hello"
                ws.send_text(json.dumps({"type": "reset", "seed": 3}))
                ws.send_text(json.dumps({"type": "record", "on": True}))
                steps = []
                tick_no = 0
                bend = [0.0] * 20
                while len(steps) < 200:
                    # a fresh command every client tick, curling into the wall
                    tick_no += 1
                    bend[1] = min(1.0, 0.02 * tick_no)
                    ws.send_text(json.dumps({"type": "command", "insert": 1,
                                             "bend": bend}))
                    msg = ws.receive_json()
                    if msg.get("type") == "state":
                        steps.append(msg["step"])
                ws.send_text(json.dumps({"type": "record", "on": False}))
                for _ in range(40):
                    m = ws.receive_json()
                    if m.get("message") == "recording closed":
                        break
            path = app.state.session.last_recording
        diffs = np.diff(steps)
        assert np.all(diffs >= 0)
        assert steps[-1] - steps[0] >= 150
        samples, warnings = read_force_log(path)
        assert warnings == []
        assert len(samples) >= 1
        rc = main(["validate-forces", "--log", str(path), "--mu",
                   str(float(np.mean([s.magnitude for s in samples]))),
                   "--sigma", "0.02", "--out", str(tmp_path / "val")])
        out = capsys.readouterr().out
        assert rc == 0
        assert "warning:" not in out
        ok("teleop round trip: 200 command ticks, monotone step indices, "
           f"{len(samples)} recorded force rows validate with zero warnings")
