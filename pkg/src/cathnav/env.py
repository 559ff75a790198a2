"""The episodic cannulation POMDP.

Episodes start with the catheter straight in the ascending aorta, tip at the
start site plus a seeded +-1 mm insertion jitter.  Each step clamps the
21-dimensional action to [-1, 1], maps the first 20 components to tip
bending torques and the last to an insertion velocity target, runs the
physics substeps, and rewards the negative tip-to-goal distance, or the
success bonus once the tip is within ``delta`` of the goal:

    r = bonus            if ||h - g|| <= delta   (boundary counts as success)
        -||h - g||       otherwise

Termination ends the episode at the goal; truncation ends it at the step
cap or on integrator divergence.  Everything is deterministic given
(config, seed, action sequence).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, chain
from .chain import ActuationCommand, CatheterSpec, ChainState
from .contacts import Contact, ContactParams, detect_kernel, solve_kernel
from .errors import ConfigError, UsageError
from .forces import ForceSample
from .geometry import AortaModel, ArchParams, generate_arch, load_aorta, make_corridor
from .render import CameraSpec, render_observation
from ._geomlib import point_plane_max

OBS_KINDS = ("internal", "image", "sequential")
TARGETS = ("bca", "lcca")


@dataclass(frozen=True)
class EnvConfig:
    arch_kind: str = "type1"            # type1 | type2 | corridor | external
    target: str = "bca"                 # bca | lcca
    obs_kind: str = "internal"          # internal | image | sequential
    delta: float = 0.008                # success radius, m
    max_steps: int = 2000
    reset_jitter: float = 0.001         # m, uniform insertion perturbation
    success_bonus: float = 10.0
    seed: int = 0
    catheter: CatheterSpec = field(default_factory=CatheterSpec)
    contact: ContactParams = field(default_factory=ContactParams)
    arch_params: ArchParams = field(default_factory=ArchParams)
    manifest_path: str | None = None    # hull-set file for arch_kind external
    dt: float = 0.004                   # physics substep, s
    substeps: int = 4                   # substeps per environment step
    image_resolution: int = 128
    # Neutral buoyancy by default: the phantom lumen is fluid-filled and the
    # catheter is near-neutrally buoyant, so the episodic task runs without
    # a net gravity load.  Set (0, 0, -9.81) for a dry phantom.
    gravity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigError("delta must be > 0")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.obs_kind not in OBS_KINDS:
            raise ConfigError(f"obs_kind must be one of {OBS_KINDS}")
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}")
        if self.arch_kind == "external" and not self.manifest_path:
            raise ConfigError("external arch_kind requires manifest_path")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["catheter"]["insertion_range"] = list(self.catheter.insertion_range)
        return d

    @staticmethod
    def from_dict(d: dict) -> "EnvConfig":
        d = dict(d)
        cath = dict(d.pop("catheter", {}))
        if "insertion_range" in cath:
            cath["insertion_range"] = tuple(cath["insertion_range"])
        contact = dict(d.pop("contact", {}))
        arch = dict(d.pop("arch_params", {}))
        if "gravity" in d:
            d["gravity"] = tuple(d["gravity"])
        return EnvConfig(catheter=CatheterSpec(**cath),
                         contact=ContactParams(**contact),
                         arch_params=ArchParams(**arch), **d)


@dataclass
class StepResult:
    observation: object
    reward: float
    terminated: bool
    truncated: bool
    info: dict


def reward(h: np.ndarray, g: np.ndarray, delta: float, bonus: float) -> float:
    """Distance-shaped reward with an inclusive success boundary."""
    h = np.asarray(h, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(g))):
        raise ValueError("positions must be finite")
    d = float(np.linalg.norm(h - g))
    return bonus if d <= delta else -d


_MODEL_CACHE: dict = {}


def build_aorta(config: EnvConfig) -> AortaModel:
    if config.arch_kind == "external":
        key = ("external", config.manifest_path)
        if key not in _MODEL_CACHE:
            _MODEL_CACHE[key] = load_aorta(config.manifest_path)
        return _MODEL_CACHE[key]
    key = (config.arch_kind, config.arch_params)
    if key not in _MODEL_CACHE:
        if config.arch_kind == "corridor":
            _MODEL_CACHE[key] = make_corridor(config.arch_params)
        else:
            _MODEL_CACHE[key] = generate_arch(config.arch_kind, config.arch_params)
    return _MODEL_CACHE[key]


def _base_rotation(axis: np.ndarray) -> np.ndarray:
    """Base frame: local +x along the insertion axis, local +z = world +z."""
    a = axis / np.linalg.norm(axis)
    up = np.array([0.0, 0.0, 1.0])
    if abs(a @ up) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    col1 = np.cross(up, a)
    col1 /= np.linalg.norm(col1)
    col2 = np.cross(a, col1)
    return np.stack([a, col1, col2], axis=1)


class CathNavEnv:
    """Single-owner environment instance; run many in parallel, one per thread."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.aorta = build_aorta(config)
        spec = config.catheter
        self.spec = spec
        axis = self.aorta.insertion_axis
        start = self.aorta.sites["start"]
        base_pos = start - spec.n_links * spec.link_length * axis
        self.model = chain.build_catheter_model(
            spec, base_pos, _base_rotation(axis),
            gravity=np.asarray(config.gravity, dtype=np.float64))
        self.goal = self.aorta.sites[f"{config.target}_target"].copy()
        self.camera = CameraSpec.for_model(self.aorta, config.image_resolution)
        g = self.aorta.packed()
        self._geo = g
        cap = spec.n_links * max(8, len(self.aorta.hulls))
        self._c_link = np.zeros(cap, dtype=np.int64)
        self._c_hull = np.zeros(cap, dtype=np.int64)
        self._c_point = np.zeros((cap, 3))
        self._c_normal = np.zeros((cap, 3))
        self._c_dist = np.zeros(cap)
        self._c_f = np.zeros((cap, 3))
        self._wrench = np.zeros((spec.n_links, 6))
        self._link_axis = np.array([spec.link_length, 0.0, 0.0])
        self._cap_mass = self._effective_masses()
        self.state: ChainState | None = None
        self._episode = -1
        self._steps = 0
        self._done = True
        self._frames: list[np.ndarray] = []
        self._last_actuation = np.zeros(spec.action_dim)
        self._last_wrench = np.zeros((spec.n_links, 6))
        self._last_distance = np.inf
        self._obs_len: int | None = None

    def _effective_masses(self) -> np.ndarray:
        """Per-link effective mass for transverse contact forces.

        A transverse force at link i accelerates every bending joint between
        it and the base with lever arm (i - j + 1/2) links; the implicitly
        integrated joint damping/stiffness acts as an armature inertia at
        each joint.  The reciprocal-sum of lever^2/armature bounds the
        contact-point compliance; total chain mass bounds the translation
        mode.  Used to cap contact impulses at a momentum-consistent level.
        """
        spec = self.spec
        dt = self.config.dt
        arm = (dt * spec.joint_damping + dt * dt * spec.joint_stiffness
               + spec.link_mass * (3 * spec.link_radius ** 2
                                   + spec.link_length ** 2) / 12.0)
        total = spec.n_links * spec.link_mass
        out = np.empty(spec.n_links)
        for i in range(spec.n_links):
            w = 1.0 / total
            for j in range(1, i + 1):
                lever = (i - j + 0.5) * spec.link_length
                w += lever * lever / arm
            out[i] = 1.0 / w
        return out

    # -- observation metadata -------------------------------------------------

    @property
    def action_dim(self) -> int:
        return self.spec.action_dim

    @property
    def observation_length(self) -> int:
        """Internal observation vector length (fixed per spec arithmetic)."""
        n = self.spec.n_links
        return 2 * self.spec.nq + 3 * n + 3 * n + self.spec.action_dim + 3 * n

    def observation_layout(self) -> dict:
        n = self.spec.n_links
        nq = self.spec.nq
        blocks = [("joint_positions", nq), ("joint_velocities", nq),
                  ("com_inertia_diag_world", 3 * n), ("com_velocity", 3 * n),
                  ("actuator_forces", self.spec.action_dim),
                  ("external_force_per_link", 3 * n)]
        out = {}
        k = 0
        for name, size in blocks:
            out[name] = (k, k + size)
            k += size
        return out

    # -- core loop -------------------------------------------------------------

    def reset(self, seed: int | None = None):
        """Start a new episode; returns the first observation."""
        self._episode += 1
        if seed is None:
            seed_seq = np.random.SeedSequence(self.config.seed,
                                              spawn_key=(self._episode,))
        else:
            seed_seq = np.random.SeedSequence(seed)
        rng = np.random.default_rng(seed_seq)
        st = chain.zero_state(self.spec)
        st.q[0] = rng.uniform(-self.config.reset_jitter,
                              self.config.reset_jitter)
        self.state = st
        self._steps = 0
        self._done = False
        self._last_actuation = np.zeros(self.spec.action_dim)
        self._last_wrench[:] = 0.0
        Rw, pw, ww, vw = self._fk()
        tip = pw[-1] + Rw[-1] @ self._link_axis
        self._last_distance = float(np.linalg.norm(tip - self.goal))
        if self.config.obs_kind in ("image", "sequential"):
            frame = self._render(Rw, pw)
            self._frames = [frame, frame.copy(), frame.copy()]
        return self._observation(Rw, pw, ww, vw)

    def _fk(self):
        m = self.model
        return chain.fk_kernel(m.jtype, m.offset, m.qi, self.state.q,
                               self.state.qdot, m.base_pos, m.base_rot)

    def _render(self, Rw, pw):
        p1 = pw + np.einsum("nij,j->ni", Rw, self._link_axis)
        return render_observation(pw, p1, self.spec.link_radius, self.aorta,
                                  self.camera)

    def _substep(self, tau: np.ndarray, record: list | None):
        m = self.model
        cp = self.config.contact
        st = self.state
        Rw, pw, ww, vw = self._fk()
        p1 = pw + np.einsum("nij,j->ni", Rw, self._link_axis)
        g = self._geo
        n = detect_kernel(pw, p1, self.spec.link_radius, cp.margin,
                          g.face_normals, g.face_offsets, g.face_collidable,
                          g.hull_face_start, g.hull_face_end,
                          g.tri_a, g.tri_b, g.tri_c, g.tri_collidable,
                          g.hull_tri_start, g.hull_tri_end, g.hull_aabb,
                          self._c_link, self._c_hull, self._c_point,
                          self._c_normal, self._c_dist)
        solve_kernel(n, self._c_link, self._c_point, self._c_normal,
                     self._c_dist, pw, ww, vw,
                     cp.stiffness, cp.damping, cp.friction,
                     self.config.dt, self._cap_mass, cp.cap_beta,
                     self._c_f, self._wrench)
        q, qd = chain._step_arrays(m, st.q, st.qdot, tau, self._wrench,
                                   self.config.dt)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            return n, False
        st.q, st.qdot = q, qd
        st.time += self.config.dt
        if record is not None:
            for i in range(n):
                record.append(ForceSample(
                    st.time, float(self._c_f[i, 0]), float(self._c_f[i, 1]),
                    float(self._c_f[i, 2]), self._c_point[i].copy(),
                    int(self._c_link[i]), int(self._c_hull[i])))
        self._last_wrench = self._wrench.copy()
        return n, True

    def step(self, action: np.ndarray) -> StepResult:
        """Advance one environment step under a 21-vector action."""
        if self.state is None:
            raise UsageError("step called before reset")
        if self._done:
            raise UsageError("step after episode end; call reset")
        cmd = ActuationCommand.from_vector(self.spec, action).clamped()
        tau = chain.actuation_forces(self.spec, self.state, cmd)
        samples: list[ForceSample] = []
        n_contacts = 0
        diverged = False
        for _ in range(self.config.substeps):
            n, ok = self._substep(tau, samples)
            n_contacts += n
            if not ok:
                diverged = True
                break
        self._steps += 1
        self._last_actuation = self._actuator_forces(cmd)
        Rw, pw, ww, vw = self._fk()
        tip = pw[-1] + Rw[-1] @ self._link_axis
        if diverged:
            d = self._last_distance
            r = -d
            terminated = False
            truncated = True
        else:
            d = float(np.linalg.norm(tip - self.goal))
            self._last_distance = d
            r = reward(tip, self.goal, self.config.delta,
                       self.config.success_bonus)
            terminated = d <= self.config.delta
            truncated = (not terminated) and self._steps >= self.config.max_steps
        self._done = terminated or truncated
        if self.config.obs_kind in ("image", "sequential"):
            self._frames = self._frames[1:] + [self._render(Rw, pw)]
        obs = self._observation(Rw, pw, ww, vw)
        info = {"distance": d, "force_samples": samples,
                "success": bool(terminated), "n_contacts": n_contacts,
                "diverged": diverged, "tip": tip}
        return StepResult(obs, float(r), bool(terminated), bool(truncated), info)

    # -- observations ----------------------------------------------------------

    def _actuator_forces(self, cmd: ActuationCommand) -> np.ndarray:
        """Applied actuator values: servo force plus tip torques."""
        spec = self.spec
        out = np.zeros(spec.action_dim)
        v_cmd = cmd.insert * spec.insertion_gain
        out_idx = 0
        bend = cmd.bend * spec.torque_gain
        out[:len(bend)] = bend
        out_idx = len(bend)
        out[out_idx] = spec.servo_gain * (v_cmd - self.state.qdot[0])
        if spec.axial_rotation:
            out[out_idx + 1] = spec.servo_gain * 0.05 * (
                cmd.axial * spec.axial_gain - self.state.qdot[1])
        return out

    def internal_observation(self, Rw=None, pw=None, ww=None, vw=None) -> np.ndarray:
        """Flat vector: q, qdot, world COM inertia diagonals, COM velocities,
        actuator forces, summed external contact force per link."""
        if Rw is None:
            Rw, pw, ww, vw = self._fk()
        spec = self.spec
        ivec = np.array([spec.link_mass * 0.5 * spec.link_radius ** 2,
                         spec.link_mass * (3 * spec.link_radius ** 2
                                           + spec.link_length ** 2) / 12.0,
                         spec.link_mass * (3 * spec.link_radius ** 2
                                           + spec.link_length ** 2) / 12.0])
        inertia_world = (Rw ** 2) @ ivec
        com_w = pw + np.einsum("nij,j->ni", Rw, self.model.com[0])
        vcom = vw + np.cross(ww, np.einsum("nij,j->ni", Rw, self.model.com[0]))
        parts = [self.state.q, self.state.qdot, inertia_world.ravel(),
                 vcom.ravel(), self._last_actuation,
                 self._last_wrench[:, 3:6].ravel()]
        return np.concatenate(parts)

    def _observation(self, Rw, pw, ww, vw):
        kind = self.config.obs_kind
        if kind == "internal":
            obs = self.internal_observation(Rw, pw, ww, vw)
            if self._obs_len is None:
                self._obs_len = len(obs)
            return obs
        if kind == "image":
            return self._frames[-1]
        return np.stack(self._frames, axis=0)  # oldest first

    # -- geometry helpers --------------------------------------------------

    def tip_position(self) -> np.ndarray:
        Rw, pw, _, _ = self._fk()
        return pw[-1] + Rw[-1] @ self._link_axis

    def tip_inside_lumen(self) -> bool:
        tip = self.tip_position()
        g = self._geo
        for h in range(len(self.aorta.hulls)):
            pm, _ = point_plane_max(tip, g.face_normals, g.face_offsets,
                                    g.hull_face_start[h], g.hull_face_end[h])
            if pm <= 0.0:
                return True
        return False

    def link_segments(self):
        Rw, pw, _, _ = self._fk()
        return pw, pw + np.einsum("nij,j->ni", Rw, self._link_axis)

    def contacts(self) -> list[Contact]:
        from .contacts import detect_contacts
        p0, p1 = self.link_segments()
        return detect_contacts(p0, p1, self.spec.link_radius, self.aorta,
                               self.config.contact.margin)


# ---------------------------------------------------------------------------
# Episode logs (JSONL)
# ---------------------------------------------------------------------------

class EpisodeLogger:
    """JSONL episode log: one header record, then one record per step."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w")

    def header(self, config: EnvConfig, seed) -> None:
        rec = {"type": "header", "config": config.to_dict(),
               "seed": seed, "code_version": __version__}
        self._fh.write(json.dumps(rec) + "\n")

    def record(self, t: int, action, result: StepResult) -> None:
        ft_sum = float(sum(s.magnitude for s in result.info["force_samples"]))
        rec = {"type": "step", "t": t,
               "action": [float(a) for a in np.asarray(action).ravel()],
               "reward": float(result.reward),
               "d": float(result.info["distance"]),
               "terminated": bool(result.terminated),
               "truncated": bool(result.truncated),
               "n_contacts": int(result.info["n_contacts"]),
               "f_t_sum": ft_sum}
        self._fh.write(json.dumps(rec) + "\n")

    def close(self) -> None:
        self._fh.close()


def run_episode(config: EnvConfig, actions, seed: int | None = None,
                log_path=None) -> list[dict]:
    """Run a fixed action sequence; returns the step records (and logs them)."""
    env = CathNavEnv(config)
    env.reset(seed)
    logger = EpisodeLogger(log_path) if log_path else None
    if logger:
        logger.header(config, seed if seed is not None else config.seed)
    records = []
    for t, a in enumerate(actions):
        res = env.step(a)
        ft_sum = float(sum(s.magnitude for s in res.info["force_samples"]))
        records.append({"t": t, "reward": res.reward,
                        "d": res.info["distance"],
                        "terminated": res.terminated,
                        "truncated": res.truncated,
                        "n_contacts": res.info["n_contacts"],
                        "f_t_sum": ft_sum})
        if logger:
            logger.record(t, a, res)
        if res.terminated or res.truncated:
            break
    if logger:
        logger.close()
    return records
