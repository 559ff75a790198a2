"""Command-line entry points.

Verbs: gen-arch, train, eval, replay, validate-forces, serve.  Every verb
that produces artifacts also writes a manifest.json with the config hash,
seed, and code version needed to reproduce them.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .env import CathNavEnv, EnvConfig, EpisodeLogger
from .errors import ConfigError
from .forces import read_force_log, write_force_log
from .geometry import generate_arch, make_corridor, save_manifest
from .ppo import (EVAL_COLUMNS, ScriptedInsertion, TrainConfig, evaluate,
                  load_checkpoint, make_policy_spec, save_checkpoint, train,
                  write_curve_csv, PolicySpec, check_compatible)
from .runconfig import RunConfig, write_manifest
from .stats import empirical_cdf, gaussian_kde, validate_against_normal


def _env_config_from_args(args) -> EnvConfig:
    kw = dict(arch_kind=args.arch, target=args.target, obs_kind=args.obs,
              seed=args.seed)
    if getattr(args, "max_steps", None):
        kw["max_steps"] = args.max_steps
    if args.arch == "external":
        kw["manifest_path"] = args.manifest
    return EnvConfig(**kw)


def _add_env_args(p, obs_default="internal"):
    p.add_argument("--arch", default="type1",
                   choices=["type1", "type2", "corridor", "external"])
    p.add_argument("--target", default="bca", choices=["bca", "lcca"])
    p.add_argument("--obs", default=obs_default,
                   choices=["internal", "image", "sequential"])
    p.add_argument("--manifest", help="hull-set manifest for --arch external")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, dest="max_steps")


def cmd_gen_arch(args) -> int:
    if args.kind == "corridor":
        model = make_corridor()
    else:
        model = generate_arch(args.kind)
    save_manifest(model, args.out)
    print(f"wrote {args.out}: {len(model.hulls)} hulls, "
          f"{len(model.surface_points)} surface points")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    env_cfg = _env_config_from_args(args)
    tc = TrainConfig(total_steps=args.steps, seed=args.seed,
                     horizon=args.horizon, log_interval=args.log_interval)
    cfg = RunConfig(env=env_cfg, train=tc, out_dir=str(out))
    cfg.save(out / "config.json")
    if args.policy:
        env_probe = CathNavEnv(env_cfg)
        spec = make_policy_spec(env_probe)
        forced = PolicySpec(args.policy, spec.obs_shape, spec.action_dim)
        check_compatible(forced, env_cfg.obs_kind)
        policy_spec = forced
    else:
        policy_spec = None
    result = train(env_cfg, policy_spec=policy_spec, config=tc,
                   progress=not args.quiet)
    write_curve_csv(result.curve, out / "curve.csv")
    save_checkpoint(out / "checkpoint.npz", result.policy, result.normalizer, tc)
    with open(out / "episodes.jsonl", "w") as fh:
        for i, (ret, suc) in enumerate(zip(result.episode_returns,
                                           result.episode_successes)):
            fh.write(json.dumps({"episode": i, "return": float(ret),
                                 "success": bool(suc)}) + "\n")
    write_manifest(out, cfg, ["config.json", "curve.csv", "checkpoint.npz",
                              "episodes.jsonl"])
    print(f"trained {args.steps} steps; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    env_cfg = _env_config_from_args(args)
    if args.scripted:
        policy = ScriptedInsertion()
        normalizer = None
    else:
        ck = Path(args.checkpoint or "")
        if not ck.exists():
            print(f"error: checkpoint not found: {ck}", file=sys.stderr)
            return 2
        policy, normalizer, _ = load_checkpoint(ck)
    report = evaluate(policy, env_cfg, n_episodes=args.episodes,
                      normalizer=normalizer, seed=args.eval_seed)
    row = report.row()
    widths = [max(len(c), len(row[c])) for c in EVAL_COLUMNS]
    print(" | ".join(c.ljust(w) for c, w in zip(EVAL_COLUMNS, widths)))
    print("-+-".join("-" * w for w in widths))
    print(" | ".join(row[c].ljust(w) for c, w in zip(EVAL_COLUMNS, widths)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(report.to_dict(), indent=2))
        if args.save_logs:
            _write_eval_logs(policy, normalizer, env_cfg, args, out)
        cfg = RunConfig(env=env_cfg, train=TrainConfig(seed=args.seed),
                        out_dir=str(out))
        write_manifest(out, cfg, ["eval.json"])
    return 0


def _write_eval_logs(policy, normalizer, env_cfg, args, out: Path) -> None:
    from .ppo import _prep_obs
    import torch
    env = CathNavEnv(env_cfg)
    for ep in range(args.episodes):
        seed = args.eval_seed + ep
        obs = env.reset(seed=seed)
        logger = EpisodeLogger(out / f"episode_{ep:03d}.jsonl")
        logger.header(env_cfg, seed)
        t = 0
        while True:
            if hasattr(policy, "act"):
                a = policy.act(obs)
            else:
                o = _prep_obs(obs, env_cfg.obs_kind, normalizer)
                with torch.no_grad():
                    mean, _, _ = policy.distribution(torch.as_tensor(o[None]))
                a = mean[0].numpy().astype(np.float64)
            res = env.step(a)
            logger.record(t, a, res)
            obs = res.observation
            t += 1
            if res.terminated or res.truncated:
                break
        logger.close()


def cmd_replay(args) -> int:
    path = Path(args.log)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    if header.get("type") != "header":
        print("error: log has no header record", file=sys.stderr)
        return 2
    env_cfg = EnvConfig.from_dict(header["config"])
    seed = header["seed"]
    env = CathNavEnv(env_cfg)
    env.reset(seed=seed)
    mismatches = 0
    for ln, line in enumerate(lines[1:]):
        rec = json.loads(line)
        res = env.step(np.asarray(rec["action"]))
        ok = (rec["reward"] == res.reward
              and rec["d"] == res.info["distance"]
              and rec["terminated"] == res.terminated
              and rec["truncated"] == res.truncated)
        if not ok:
            mismatches += 1
            if mismatches <= 3:
                print(f"mismatch at step {rec['t']}: logged reward "
                      f"{rec['reward']!r}, replayed {res.reward!r}")
        if res.terminated or res.truncated:
            break
    if mismatches:
        print(f"replay diverged: {mismatches} mismatching steps")
        return 1
    print(f"replay OK: {len(lines) - 1} steps reproduced bitwise")
    return 0


def cmd_validate_forces(args) -> int:
    try:
        samples, warnings = read_force_log(args.log)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for w in warnings:
        print(f"warning: {w}")
    if not samples:
        print("error: force log holds no samples", file=sys.stderr)
        return 2
    mags = np.asarray([s.magnitude for s in samples])
    try:
        report = validate_against_normal(mags, args.mu, args.sigma,
                                         seed=args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(report.to_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "validation.json").write_text(json.dumps(report.to_dict(), indent=2))
    (out / "validation.txt").write_text(report.to_text() + "\n")
    _write_plot_data(mags, args, out)
    print(f"report written to {out}")
    return 0


def _write_plot_data(mags: np.ndarray, args, out: Path) -> None:
    """Fig.5-style plot data: KDE and empirical CDF of both distributions."""
    rng = np.random.default_rng(args.seed)
    ref = rng.normal(args.mu, args.sigma, len(mags))
    lo = min(mags.min(), ref.min())
    hi = max(mags.max(), ref.max())
    pad = 0.1 * (hi - lo + 1e-12)
    grid = np.linspace(lo - pad, hi + pad, 256)
    kde_sim = gaussian_kde(mags)(grid)
    kde_ref = gaussian_kde(ref)(grid)
    cdf_sim = empirical_cdf(mags)(grid)
    cdf_ref = empirical_cdf(ref)(grid)
    rows = ["x,kde_sim,kde_ref,cdf_sim,cdf_ref"]
    for i in range(len(grid)):
        rows.append(f"{grid[i]!r},{kde_sim[i]!r},{kde_ref[i]!r},"
                    f"{cdf_sim[i]!r},{cdf_ref[i]!r}")
    (out / "plotdata.csv").write_text("\n".join(rows) + "\n")


def cmd_serve(args) -> int:
    from .teleop import serve
    env_cfg = _env_config_from_args(args)
    serve(env_cfg, port=args.port, tick_rate=args.tick_rate,
          record_dir=args.record_dir, ui_dir=args.ui_dir,
          stream_frames=args.stream_frames)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cathnav",
                                description="endovascular navigation simulator")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-arch", help="write a hull-set manifest")
    g.add_argument("--kind", default="type1",
                   choices=["type1", "type2", "corridor"])
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_arch)

    t = sub.add_parser("train", help="train the PPO baseline")
    _add_env_args(t)
    t.add_argument("--steps", type=int, default=100_000)
    t.add_argument("--horizon", type=int, default=2048)
    t.add_argument("--log-interval", type=int, default=100)
    t.add_argument("--policy", choices=["mlp", "cnn"],
                   help="force a policy variant (validated against --obs)")
    t.add_argument("--out", required=True)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="30-episode evaluation protocol")
    _add_env_args(e)
    e.add_argument("--checkpoint")
    e.add_argument("--scripted", action="store_true",
                   help="evaluate the straight-insertion reference policy")
    e.add_argument("--episodes", type=int, default=30)
    e.add_argument("--eval-seed", type=int, default=1000)
    e.add_argument("--save-logs", action="store_true",
                   help="write per-episode step logs (JSONL)")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("replay", help="re-run a recorded episode log")
    r.add_argument("--log", required=True)
    r.set_defaults(fn=cmd_replay)

    v = sub.add_parser("validate-forces",
                       help="compare a force log against a reference normal")
    v.add_argument("--log", required=True)
    v.add_argument("--mu", type=float, required=True)
    v.add_argument("--sigma", type=float, required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default="validation_out")
    v.set_defaults(fn=cmd_validate_forces)

    s = sub.add_parser("serve", help="teleoperation websocket service")
    _add_env_args(s, obs_default="internal")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--tick-rate", type=float, default=25.0)
    s.add_argument("--record-dir", default="recordings")
    s.add_argument("--ui-dir", default=None,
                   help="static directory with the browser client")
    s.add_argument("--stream-frames", action="store_true",
                   help="include the 128x128 frame in state messages")
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
