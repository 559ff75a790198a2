"""Desk-scale PPO baseline for the cannulation environment.

Policies follow the two architectures used for this task: an MLP with two
tanh hidden layers of 64 units for internal observations, and a CNN with
three ReLU convolutions (8x8/4 x32, 4x4/2 x64, 3x3/1 x64) plus a 512-unit
dense layer for image observations (1 channel) and sequential stacks
(3 channels).  Both end in a Gaussian action head with a state-independent
log-std and a scalar value head.  Adam with learning rate 3e-4 trains all
networks; the remaining hyperparameters are the standard defaults of the
clipped-surrogate algorithm (clip 0.2, gamma 0.99, lambda 0.95, 10 epochs,
minibatches of 64, horizon 2048).

Internal observations span many orders of magnitude (positions vs inertia
entries), so the trainer keeps a running observation normalizer; it is part
of the checkpoint.  Actions are sampled from the Gaussian head and clamped
by the environment; log-probabilities are computed before the clamp.
Training is single-threaded and fully seeded: identical configs reproduce
identical curves bitwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .env import CathNavEnv, EnvConfig
from .errors import ConfigError
from .forces import episode_force_stats

EVAL_COLUMNS = ("Reward", "Mean Force (N)", "Max Force (N)", "Success %")


# ---------------------------------------------------------------------------
# Policy networks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicySpec:
    variant: str                 # "mlp" | "cnn"
    obs_shape: tuple             # (dim,) for mlp, (channels, H, W) for cnn
    action_dim: int = 21
    hidden: int = 64             # mlp hidden width
    cnn_dense: int = 512

    def __post_init__(self):
        if self.variant not in ("mlp", "cnn"):
            raise ConfigError("policy variant must be 'mlp' or 'cnn'")
        if self.variant == "mlp" and len(self.obs_shape) != 1:
            raise ConfigError("mlp policy needs a flat observation")
        if self.variant == "cnn" and len(self.obs_shape) != 3:
            raise ConfigError("cnn policy needs a (C, H, W) observation")


def _ortho(layer: nn.Module, gain: float) -> nn.Module:
    nn.init.orthogonal_(layer.weight, gain=gain)
    nn.init.constant_(layer.bias, 0.0)
    return layer


class GaussianPolicy(nn.Module):
    """Shared trunk with a Gaussian action head and a scalar value head."""

    def __init__(self, spec: PolicySpec):
        super().__init__()
        self.spec = spec
        if spec.variant == "mlp":
            d = spec.obs_shape[0]
            self.trunk = nn.Sequential(
                _ortho(nn.Linear(d, spec.hidden), 1.0), nn.Tanh(),
                _ortho(nn.Linear(spec.hidden, spec.hidden), 1.0), nn.Tanh())
            feat = spec.hidden
        else:
            c = spec.obs_shape[0]
            self.trunk = nn.Sequential(
                _ortho(nn.Conv2d(c, 32, 8, stride=4), 1.0), nn.ReLU(),
                _ortho(nn.Conv2d(32, 64, 4, stride=2), 1.0), nn.ReLU(),
                _ortho(nn.Conv2d(64, 64, 3, stride=1), 1.0), nn.ReLU(),
                nn.Flatten())
            with torch.no_grad():
                n_flat = self.trunk(torch.zeros(1, *spec.obs_shape)).shape[1]
            self.trunk.append(_ortho(nn.Linear(n_flat, spec.cnn_dense), 1.0))
            self.trunk.append(nn.ReLU())
            feat = spec.cnn_dense
        self.mean_head = _ortho(nn.Linear(feat, spec.action_dim), 0.01)
        self.value_head = _ortho(nn.Linear(feat, 1), 1.0)
        self.log_std = nn.Parameter(torch.zeros(spec.action_dim))

    def forward(self, obs: torch.Tensor):
        z = self.trunk(obs)
        return self.mean_head(z), self.value_head(z).squeeze(-1)

    def distribution(self, obs: torch.Tensor):
        mean, value = self(obs)
        std = torch.exp(self.log_std)
        return mean, std, value

    def log_prob(self, mean, std, actions):
        var = std * std
        lp = -0.5 * ((actions - mean) ** 2 / var) \
            - torch.log(std) - 0.5 * math.log(2.0 * math.pi)
        return lp.sum(-1)

    def entropy(self, std):
        return (0.5 * torch.log(2.0 * math.pi * math.e * std * std)).sum(-1)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def make_policy_spec(env: CathNavEnv) -> PolicySpec:
    """Policy variant implied by the environment's observation kind."""
    kind = env.config.obs_kind
    if kind == "internal":
        return PolicySpec("mlp", (env.observation_length,),
                          env.action_dim)
    if kind == "image":
        r = env.config.image_resolution
        return PolicySpec("cnn", (1, r, r), env.action_dim)
    r = env.config.image_resolution
    return PolicySpec("cnn", (3, r, r), env.action_dim)


def check_compatible(spec: PolicySpec, obs_kind: str) -> None:
    want = {"internal": "mlp", "image": "cnn", "sequential": "cnn"}[obs_kind]
    if spec.variant != want:
        raise ConfigError(
            f"obs_kind '{obs_kind}' requires a {want} policy, got {spec.variant}")
    if obs_kind == "image" and spec.obs_shape[0] != 1:
        raise ConfigError("image observations feed a 1-channel cnn")
    if obs_kind == "sequential" and spec.obs_shape[0] != 3:
        raise ConfigError("sequential observations feed a 3-channel cnn")


class RunningNorm:
    """Running mean/std observation normalizer (Welford over batches)."""

    def __init__(self, shape):
        self.mean = np.zeros(shape, dtype=np.float64)
        self.var = np.ones(shape, dtype=np.float64)
        self.count = 1e-4

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64)
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        b_n = batch.shape[0]
        delta = b_mean - self.mean
        tot = self.count + b_n
        self.mean += delta * b_n / tot
        m_a = self.var * self.count
        m_b = b_var * b_n
        self.var = (m_a + m_b + delta ** 2 * self.count * b_n / tot) / tot
        self.count = tot

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return ((obs - self.mean) / np.sqrt(self.var + 1e-8)).astype(np.float32)

    def state(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist(),
                "count": self.count}

    @staticmethod
    def from_state(d: dict) -> "RunningNorm":
        rn = RunningNorm(len(d["mean"]))
        rn.mean = np.asarray(d["mean"], dtype=np.float64)
        rn.var = np.asarray(d["var"], dtype=np.float64)
        rn.count = float(d["count"])
        return rn


def _prep_obs(obs, kind: str, norm: RunningNorm | None) -> np.ndarray:
    if kind == "internal":
        o = np.asarray(obs, dtype=np.float64)
        return norm(o) if norm is not None else o.astype(np.float32)
    o = np.asarray(obs, dtype=np.float32) / 255.0
    if kind == "image":
        o = o[None, :, :]
    return o


# ---------------------------------------------------------------------------
# GAE and the clipped-surrogate update
# ---------------------------------------------------------------------------

def compute_gae(rewards, values, dones, gamma: float, lam: float,
                bootstrap: float = 0.0):
    """Advantages and returns: A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("rewards, values, dones must have equal length")
    T = len(rewards)
    adv = np.zeros(T)
    next_value = bootstrap
    acc = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * (1.0 - dones[t]) - values[t]
        acc = delta + gamma * lam * (1.0 - dones[t]) * acc
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 64
    horizon: int = 2048
    total_steps: int = 100_000
    seed: int = 0
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_obs: bool = True
    log_interval: int = 100       # curve rows every this many env steps

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError("gamma must be in (0, 1]")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError("lambda must be in [0, 1]")
        if self.clip <= 0.0:
            raise ConfigError("clip must be > 0")


def ppo_loss(policy: GaussianPolicy, batch: dict, clip: float,
             vf_coef: float = 0.5, ent_coef: float = 0.0):
    """Clipped-surrogate PPO loss on a prepared batch.

    The batch holds tensors obs, actions, old_log_prob, advantages
    (already normalized), returns.  Returns (total_loss, stats).
    """
    mean, std, value = policy.distribution(batch["obs"])
    logp = policy.log_prob(mean, std, batch["actions"])
    ratio = torch.exp(logp - batch["old_log_prob"])
    adv = batch["advantages"]
    unclipped = ratio * adv
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * adv
    policy_loss = -torch.min(unclipped, clipped).mean()
    value_loss = 0.5 * ((value - batch["returns"]) ** 2).mean()
    entropy = policy.entropy(std).mean()
    total = policy_loss + vf_coef * value_loss - ent_coef * entropy
    with torch.no_grad():
        clip_frac = ((ratio - 1.0).abs() > clip).float().mean()
    stats = {"policy_loss": float(policy_loss.detach()),
             "value_loss": float(value_loss.detach()),
             "entropy": float(entropy.detach()),
             "clip_fraction": float(clip_frac)}
    return total, stats


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(policy: GaussianPolicy, optimizer, buffer: dict,
               config: TrainConfig, generator: torch.Generator | None = None):
    """Run the epoch/minibatch update over a rollout buffer of numpy arrays."""
    n = len(buffer["rewards"])
    adv = normalize_advantages(buffer["advantages"])
    obs_t = torch.as_tensor(np.asarray(buffer["obs"], dtype=np.float32))
    act_t = torch.as_tensor(np.asarray(buffer["actions"], dtype=np.float32))
    logp_t = torch.as_tensor(np.asarray(buffer["log_probs"], dtype=np.float32))
    adv_t = torch.as_tensor(adv.astype(np.float32))
    ret_t = torch.as_tensor(np.asarray(buffer["returns"], dtype=np.float32))
    reports = []
    for _ in range(config.epochs):
        perm = torch.randperm(n, generator=generator)
        for start in range(0, n, config.minibatch):
            idx = perm[start:start + config.minibatch]
            batch = {"obs": obs_t[idx], "actions": act_t[idx],
                     "old_log_prob": logp_t[idx], "advantages": adv_t[idx],
                     "returns": ret_t[idx]}
            total, stats = ppo_loss(policy, batch, config.clip,
                                    config.vf_coef, config.ent_coef)
            if not torch.isfinite(total):
                stats["aborted"] = True
                reports.append(stats)
                return _mean_report(reports)
            optimizer.zero_grad()
            total.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), config.max_grad_norm)
            optimizer.step()
            reports.append(stats)
    return _mean_report(reports)


def _mean_report(reports) -> dict:
    if not reports:
        return {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
                "clip_fraction": 0.0}
    keys = ("policy_loss", "value_loss", "entropy", "clip_fraction")
    out = {k: float(np.mean([r[k] for r in reports if k in r])) for k in keys}
    out["aborted"] = any(r.get("aborted") for r in reports)
    return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    policy: GaussianPolicy
    curve: np.ndarray             # rows (step, mean_reward_100)
    episode_returns: list
    episode_successes: list
    normalizer: RunningNorm | None
    reports: list


def train(env_config: EnvConfig, policy_spec: PolicySpec | None = None,
          config: TrainConfig = TrainConfig(),
          checkpoint_dir=None, checkpoint_interval: int | None = None,
          progress: bool = False) -> TrainResult:
    """Train PPO on the environment; fully seeded and reproducible.

    The curve holds the mean reward of the last 100 steps, sampled every
    ``log_interval`` environment steps.
    """
    torch.set_num_threads(1)  # fixed reduction order for reproducibility
    torch.manual_seed(config.seed)
    env = CathNavEnv(env_config)
    spec = policy_spec or make_policy_spec(env)
    check_compatible(spec, env_config.obs_kind)
    policy = GaussianPolicy(spec)
    optimizer = torch.optim.Adam(policy.parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(config.seed + 1)
    norm = (RunningNorm(spec.obs_shape[0])
            if (config.normalize_obs and spec.variant == "mlp") else None)

    curve = []
    recent = []
    episode_returns: list[float] = []
    episode_successes: list[bool] = []
    reports = []
    kind = env_config.obs_kind

    obs_raw = env.reset()
    ep_ret = 0.0
    steps_done = 0
    while steps_done < config.total_steps:
        horizon = min(config.horizon, config.total_steps - steps_done)
        buf_obs = np.empty((horizon,) + tuple(
            spec.obs_shape), dtype=np.float32)
        buf_act = np.empty((horizon, spec.action_dim), dtype=np.float32)
        buf_logp = np.empty(horizon, dtype=np.float64)
        buf_rew = np.empty(horizon, dtype=np.float64)
        buf_val = np.empty(horizon, dtype=np.float64)
        buf_done = np.empty(horizon, dtype=np.float64)
        buf_trunc_boot = np.zeros(horizon, dtype=np.float64)
        raw_batch = [] if norm is not None else None
        for t in range(horizon):
            o = _prep_obs(obs_raw, kind, norm)
            if raw_batch is not None:
                raw_batch.append(np.asarray(obs_raw, dtype=np.float64))
            with torch.no_grad():
                ot = torch.as_tensor(o[None])
                mean, std, value = policy.distribution(ot)
                noise = torch.randn(mean.shape, generator=gen)
                action = mean + std * noise
                logp = policy.log_prob(mean, std, action)
            a = action[0].numpy().astype(np.float64)
            res = env.step(a)
            buf_obs[t] = o
            buf_act[t] = action[0].numpy()
            buf_logp[t] = float(logp[0])
            buf_rew[t] = res.reward
            buf_val[t] = float(value[0])
            done = res.terminated or res.truncated
            buf_done[t] = 1.0 if done else 0.0
            ep_ret += res.reward
            recent.append(res.reward)
            if len(recent) > 100:
                recent.pop(0)
            steps_done += 1
            if steps_done % config.log_interval == 0:
                curve.append((steps_done, float(np.mean(recent))))
            if done:
                episode_returns.append(ep_ret)
                episode_successes.append(bool(res.info.get("success")))
                ep_ret = 0.0
                if res.truncated:
                    # bootstrap the cut-off return from the final observation
                    o_last = _prep_obs(res.observation, kind, norm)
                    with torch.no_grad():
                        _, _, v_last = policy.distribution(
                            torch.as_tensor(o_last[None]))
                    buf_trunc_boot[t] = float(v_last[0])
                obs_raw = env.reset()
            else:
                obs_raw = res.observation
        if norm is not None:
            norm.update(np.asarray(raw_batch))
        with torch.no_grad():
            o = _prep_obs(obs_raw, kind, norm)
            _, _, v_next = policy.distribution(torch.as_tensor(o[None]))
        bootstrap = float(v_next[0])
        adv, ret = _gae_with_truncation(buf_rew, buf_val, buf_done,
                                        buf_trunc_boot, config.gamma,
                                        config.lam, bootstrap)
        buffer = {"obs": buf_obs, "actions": buf_act, "log_probs": buf_logp,
                  "rewards": buf_rew, "advantages": adv, "returns": ret}
        reports.append(ppo_update(policy, optimizer, buffer, config, gen))
        if progress:
            mr = curve[-1][1] if curve else float("nan")
            print(f"steps {steps_done}/{config.total_steps} "
                  f"mean_reward_100 {mr:.3f} episodes {len(episode_returns)}")
        if checkpoint_dir is not None and checkpoint_interval and \
                steps_done % checkpoint_interval < config.horizon:
            save_checkpoint(Path(checkpoint_dir) /
                            f"checkpoint_{steps_done:08d}.npz",
                            policy, norm, config)
    return TrainResult(policy, np.asarray(curve, dtype=np.float64),
                       episode_returns, episode_successes, norm, reports)


def _gae_with_truncation(rewards, values, dones, trunc_boot, gamma, lam,
                         bootstrap):
    """GAE where truncated episode ends bootstrap from their final value."""
    T = len(rewards)
    adv = np.zeros(T)
    acc = 0.0
    next_value = bootstrap
    for t in range(T - 1, -1, -1):
        if dones[t]:
            nv = trunc_boot[t]   # 0 for terminal, V(s_last) for truncation
            delta = rewards[t] + gamma * nv - values[t]
            acc = delta
        else:
            delta = rewards[t] + gamma * next_value - values[t]
            acc = delta + gamma * lam * acc
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


def write_curve_csv(curve: np.ndarray, path) -> None:
    rows = ["step,mean_reward_100"]
    rows += [f"{int(s)},{float(r)!r}" for s, r in curve]
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# Evaluation (30-episode protocol)
# ---------------------------------------------------------------------------

class ScriptedInsertion:
    """Straight-insertion reference policy: full insert, no bending."""

    def __init__(self, action_dim: int = 21):
        self.action_dim = action_dim

    def act(self, obs) -> np.ndarray:
        a = np.zeros(self.action_dim)
        a[-1] = 1.0
        return a


@dataclass
class EvalReport:
    reward_mean: float
    reward_std: float
    mean_force: float
    mean_force_std: float
    max_force: float
    max_force_std: float
    success_rate: float          # percent
    episodes: int

    def row(self) -> dict:
        return {"Reward": f"{self.reward_mean:.1f} +/- {self.reward_std:.1f}",
                "Mean Force (N)": f"{self.mean_force:.3f} +/- {self.mean_force_std:.3f}",
                "Max Force (N)": f"{self.max_force:.3f} +/- {self.max_force_std:.3f}",
                "Success %": f"{self.success_rate:.0f}"}

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(policy, env_config: EnvConfig, n_episodes: int = 30,
             normalizer: RunningNorm | None = None,
             seed: int = 1000) -> EvalReport:
    """Run the n-episode evaluation protocol with the deterministic policy.

    Per episode, force samples aggregate to (f_max, f_mean); the report rows
    carry mean +/- std across episodes for reward and both force statistics.
    """
    env = CathNavEnv(env_config)
    kind = env_config.obs_kind
    rets, fmeans, fmaxs, succ = [], [], [], []
    for ep in range(n_episodes):
        obs = env.reset(seed=seed + ep)
        ep_ret = 0.0
        mags = []
        while True:
            if hasattr(policy, "act"):
                a = policy.act(obs)
            else:
                o = _prep_obs(obs, kind, normalizer)
                with torch.no_grad():
                    mean, _, _ = policy.distribution(torch.as_tensor(o[None]))
                a = mean[0].numpy().astype(np.float64)
            res = env.step(a)
            ep_ret += res.reward
            mags.extend(s.magnitude for s in res.info["force_samples"])
            obs = res.observation
            if res.terminated or res.truncated:
                succ.append(bool(res.info["success"]))
                break
        f_max, f_mean = episode_force_stats(mags)
        rets.append(ep_ret)
        fmeans.append(f_mean)
        fmaxs.append(f_max)
    return EvalReport(float(np.mean(rets)), float(np.std(rets)),
                      float(np.mean(fmeans)), float(np.std(fmeans)),
                      float(np.mean(fmaxs)), float(np.std(fmaxs)),
                      100.0 * float(np.mean(succ)), n_episodes)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, policy: GaussianPolicy,
                    normalizer: RunningNorm | None,
                    train_config: TrainConfig | None = None) -> None:
    """Self-describing container: policy spec JSON + flat parameter arrays."""
    meta = {"policy_spec": {"variant": policy.spec.variant,
                            "obs_shape": list(policy.spec.obs_shape),
                            "action_dim": policy.spec.action_dim,
                            "hidden": policy.spec.hidden,
                            "cnn_dense": policy.spec.cnn_dense},
            "normalizer": normalizer.state() if normalizer else None,
            "train_config": asdict(train_config) if train_config else None}
    arrays = {f"param_{i}": p.detach().numpy()
              for i, p in enumerate(policy.parameters())}
    np.savez(path, __meta__=np.frombuffer(
        json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path):
    """Returns (policy, normalizer, meta)."""
    data = np.load(path)
    meta = json.loads(bytes(data["__meta__"]).decode())
    ps = meta["policy_spec"]
    spec = PolicySpec(ps["variant"], tuple(ps["obs_shape"]), ps["action_dim"],
                      ps["hidden"], ps["cnn_dense"])
    policy = GaussianPolicy(spec)
    with torch.no_grad():
        for i, p in enumerate(policy.parameters()):
            p.copy_(torch.as_tensor(data[f"param_{i}"]))
    norm = (RunningNorm.from_state(meta["normalizer"])
            if meta.get("normalizer") else None)
    return policy, norm, meta
