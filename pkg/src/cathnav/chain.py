"""Reduced-coordinate dynamics of the serpentine catheter.

The catheter is a serial chain: one prismatic insertion joint at the base,
then a pair of orthogonal bending joints (a universal joint) between every
consecutive pair of links.  The last ``n_tip`` links carry actuated bending
joints; all other bending joints are passive and hold spring/damper terms so
the body bends compliantly against vessel walls.

Two dynamics paths are provided:

* an articulated-body O(n) recursion (``forward_dynamics`` / the step loop),
* a dense mass-matrix path (``mass_matrix`` + ``bias_forces``) kept for
  cross-checks and tests.

``step`` integrates with semi-implicit Euler.  Joint spring/damper forces are
folded into the recursion implicitly (an armature-style diagonal term), which
keeps stiff catheter springs stable at the default 4 ms substep; the explicit
``forward_dynamics`` contract is unchanged by this and is what the oracle
tests check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import IntegrationDivergedError, LayoutError, NumericError

# Joint type codes used by the kernels.
J_PRISMATIC_X = 0   # translation along local x
J_UNIVERSAL_YZ = 1  # rotation about local y, then local z
J_REVOLUTE_Y = 2
J_REVOLUTE_Z = 3
J_PRISMATIC_AXIAL = 4  # translation along x plus rotation about x (2 dof)

_JOINT_NDOF = {J_PRISMATIC_X: 1, J_UNIVERSAL_YZ: 2, J_REVOLUTE_Y: 1,
               J_REVOLUTE_Z: 1, J_PRISMATIC_AXIAL: 2}

GRAVITY = np.array([0.0, 0.0, -9.81])


# ---------------------------------------------------------------------------
# Model containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CatheterSpec:
    """Kinematic and actuation parameters of the catheter chain.

    Defaults are sized for a desk-scale catheter: 30 links of 6 mm, with the
    last 10 links actuated (20 bending dof), giving the 21-dimensional action
    layout [20 bending torques, 1 insertion velocity].
    """

    n_links: int = 30
    n_tip: int = 10
    link_length: float = 0.006      # m
    link_radius: float = 0.001      # m
    link_mass: float = 2.0e-4       # kg
    # Damping sets the bending slew rate: at full command the steady joint
    # rate is torque_gain/joint_damping ~ 0.32 rad/s, so a max bend curls the
    # 10-joint tip ~90 degrees in ~0.5 s and the tip cannot whip through
    # walls between substeps.
    joint_damping: float = 0.025    # N*m*s/rad
    joint_stiffness: float = 0.05   # N*m/rad, restoring toward straight
    joint_limit: float = 0.35       # rad, symmetric
    insertion_gain: float = 0.02    # m/s per unit action
    torque_gain: float = 0.008      # N*m per unit action
    # Extras beyond the core contract (documented defaults, not tuned to any
    # particular anatomy):
    insertion_range: tuple[float, float] = (-0.08, 0.30)
    servo_gain: float = 4.0         # N*s/m, velocity servo on the insertion joint
    axial_rotation: bool = False    # optional base roll about the insertion axis
    axial_gain: float = 1.5         # rad/s per unit action when axial_rotation

    def __post_init__(self):
        if self.n_links < 1:
            raise LayoutError("n_links must be >= 1")
        if not (0 <= self.n_tip <= self.n_links - 1):
            # 2*n_tip actuated bending dof must exist among the n_links-1
            # joint pairs, so n_tip is capped one below n_links.
            raise LayoutError("n_tip must satisfy 0 <= n_tip <= n_links - 1")
        for name in ("link_length", "link_radius", "link_mass",
                     "insertion_gain", "torque_gain", "servo_gain"):
            if getattr(self, name) <= 0.0:
                raise LayoutError(f"{name} must be > 0")
        for name in ("joint_damping", "joint_stiffness", "joint_limit"):
            if getattr(self, name) < 0.0:
                raise LayoutError(f"{name} must be >= 0")

    @property
    def n_bend(self) -> int:
        """Number of bending dof (2 per joint pair)."""
        return 2 * (self.n_links - 1)

    @property
    def nq(self) -> int:
        """Total dof: prismatic + bending (+ optional axial roll)."""
        return 1 + self.n_bend + (1 if self.axial_rotation else 0)

    @property
    def action_dim(self) -> int:
        return 2 * self.n_tip + 1 + (1 if self.axial_rotation else 0)

    @property
    def actuated_bend_dofs(self) -> np.ndarray:
        """Dof indices of the actuated tip bending joints, proximal first."""
        base = 1 + (1 if self.axial_rotation else 0)
        first_pair = self.n_links - 1 - self.n_tip
        idx = []
        for pair in range(first_pair, self.n_links - 1):
            idx.extend((base + 2 * pair, base + 2 * pair + 1))
        return np.asarray(idx, dtype=np.int64)

    @property
    def tip_length(self) -> float:
        return self.n_tip * self.link_length


@dataclass
class ChainState:
    """Joint-space state: q/qdot in the documented layout, plus time."""

    q: np.ndarray
    qdot: np.ndarray
    time: float = 0.0

    def copy(self) -> "ChainState":
        return ChainState(self.q.copy(), self.qdot.copy(), self.time)


@dataclass(frozen=True)
class BodyPose:
    """World pose of one link frame (origin at the proximal end)."""

    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)


@dataclass
class ActuationCommand:
    """Normalized command: 20 bending values and one insertion value.

    Values are expected in [-1, 1]; ``clamped`` returns a copy with the
    clamp applied.  ``axial`` is only used when the spec enables base roll.
    """

    bend: np.ndarray
    insert: float = 0.0
    axial: float = 0.0

    @staticmethod
    def zeros(spec: CatheterSpec) -> "ActuationCommand":
        return ActuationCommand(np.zeros(2 * spec.n_tip), 0.0, 0.0)

    @staticmethod
    def from_vector(spec: CatheterSpec, a: np.ndarray) -> "ActuationCommand":
        a = np.asarray(a, dtype=float)
        if a.shape != (spec.action_dim,):
            raise LayoutError(
                f"action must have shape ({spec.action_dim},), got {a.shape}")
        nb = 2 * spec.n_tip
        axial = float(a[nb + 1]) if spec.axial_rotation else 0.0
        return ActuationCommand(a[:nb].copy(), float(a[nb]), axial)

    def clamped(self) -> "ActuationCommand":
        return ActuationCommand(np.clip(self.bend, -1.0, 1.0),
                                float(np.clip(self.insert, -1.0, 1.0)),
                                float(np.clip(self.axial, -1.0, 1.0)))


class ChainModel:
    """Packed array form of a serial chain, consumed by the numba kernels.

    Bodies are chained serially (parent of body i is body i-1).  All arrays
    are float64; the instance is immutable by convention after construction.
    """

    def __init__(self, jtypes, offsets, masses, coms, inertias,
                 damping, stiffness, qlim_lo, qlim_hi,
                 base_pos=None, base_rot=None, gravity=GRAVITY):
        self.jtype = np.asarray(jtypes, dtype=np.int64)
        self.n_bodies = len(self.jtype)
        self.offset = np.asarray(offsets, dtype=np.float64).reshape(self.n_bodies, 3)
        self.mass = np.asarray(masses, dtype=np.float64)
        self.com = np.asarray(coms, dtype=np.float64).reshape(self.n_bodies, 3)
        self.inertia = np.asarray(inertias, dtype=np.float64).reshape(self.n_bodies, 3, 3)
        self.ndof = np.array([_JOINT_NDOF[int(t)] for t in self.jtype], dtype=np.int64)
        self.qi = np.concatenate(([0], np.cumsum(self.ndof)))[:-1].astype(np.int64)
        self.nq = int(self.ndof.sum())
        self.damping = np.asarray(damping, dtype=np.float64)
        self.stiffness = np.asarray(stiffness, dtype=np.float64)
        self.qlim_lo = np.asarray(qlim_lo, dtype=np.float64)
        self.qlim_hi = np.asarray(qlim_hi, dtype=np.float64)
        for name in ("damping", "stiffness", "qlim_lo", "qlim_hi"):
            if getattr(self, name).shape != (self.nq,):
                raise LayoutError(f"{name} must have shape ({self.nq},)")
        self.base_pos = (np.zeros(3) if base_pos is None
                         else np.asarray(base_pos, dtype=np.float64))
        self.base_rot = (np.eye(3) if base_rot is None
                         else np.asarray(base_rot, dtype=np.float64))
        self.gravity = np.asarray(gravity, dtype=np.float64)
        self.I6 = np.stack([np.asarray(_spatial_inertia_py(
            self.mass[i], self.com[i], self.inertia[i]))
            for i in range(self.n_bodies)])

    def check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.nq,):
            raise LayoutError(f"expected {self.nq} coordinates, got shape {q.shape}")
        return q


def build_catheter_model(spec: CatheterSpec, base_pos=None, base_rot=None,
                         gravity=GRAVITY) -> ChainModel:
    """Assemble the ChainModel for a catheter spec.

    Link frames sit at the proximal end with the link axis along local +x.
    The base frame orientation maps local +x onto the insertion axis.
    """
    n = spec.n_links
    L, r, m = spec.link_length, spec.link_radius, spec.link_mass
    ixx = 0.5 * m * r * r
    iyy = m * (3.0 * r * r + L * L) / 12.0
    inertia = np.diag([ixx, iyy, iyy])

    jtypes = [J_PRISMATIC_AXIAL if spec.axial_rotation else J_PRISMATIC_X]
    jtypes += [J_UNIVERSAL_YZ] * (n - 1)
    offsets = [np.zeros(3)] + [np.array([L, 0.0, 0.0])] * (n - 1)
    masses = np.full(n, m)
    coms = np.tile(np.array([L / 2.0, 0.0, 0.0]), (n, 1))
    inertias = np.tile(inertia, (n, 1, 1))

    nq = spec.nq
    damping = np.full(nq, spec.joint_damping)
    stiffness = np.full(nq, spec.joint_stiffness)
    qlim_lo = np.full(nq, -spec.joint_limit)
    qlim_hi = np.full(nq, spec.joint_limit)
    # Insertion joint: velocity servo, no spring, travel limits from the spec.
    damping[0] = spec.servo_gain
    stiffness[0] = 0.0
    qlim_lo[0], qlim_hi[0] = spec.insertion_range
    if spec.axial_rotation:
        damping[1] = spec.servo_gain * 0.05
        stiffness[1] = 0.0
        qlim_lo[1], qlim_hi[1] = -np.inf, np.inf
    return ChainModel(jtypes, offsets, masses, coms, inertias,
                      damping, stiffness, qlim_lo, qlim_hi,
                      base_pos, base_rot, gravity)


_MODEL_CACHE: dict[tuple, ChainModel] = {}


def catheter_model(spec: CatheterSpec, base_pos=None, base_rot=None,
                   gravity=GRAVITY) -> ChainModel:
    """Cached ``build_catheter_model`` for identity base placement reuse."""
    key = (spec, None if base_pos is None else tuple(np.ravel(base_pos)),
           None if base_rot is None else tuple(np.ravel(base_rot)),
           tuple(np.ravel(gravity)))
    model = _MODEL_CACHE.get(key)
    if model is None:
        model = build_catheter_model(spec, base_pos, base_rot, gravity)
        _MODEL_CACHE[key] = model
    return model


def _spatial_inertia_py(mass, com, inertia_com):
    """Spatial inertia about the body frame origin (python-side, model build)."""
    c = np.asarray(com, dtype=np.float64)
    C = np.array([[0.0, -c[2], c[1]], [c[2], 0.0, -c[0]], [-c[1], c[0], 0.0]])
    I6 = np.zeros((6, 6))
    I6[0:3, 0:3] = inertia_com + mass * (C @ C.T)
    I6[0:3, 3:6] = mass * C
    I6[3:6, 0:3] = mass * C.T
    I6[3:6, 3:6] = mass * np.eye(3)
    return I6


# ---------------------------------------------------------------------------
# Numba kernels: small math helpers
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _skew(v):
    s = np.zeros((3, 3))
    s[0, 1] = -v[2]
    s[0, 2] = v[1]
    s[1, 0] = v[2]
    s[1, 2] = -v[0]
    s[2, 0] = -v[1]
    s[2, 1] = v[0]
    return s


@njit(cache=True)
def _joint_geometry(jt, q0, q1):
    """Rotation of the child in parent coords and local translation."""
    R = np.eye(3)
    t = np.zeros(3)
    if jt == J_PRISMATIC_X:
        t[0] = q0
    elif jt == J_UNIVERSAL_YZ:
        cy, sy = math.cos(q0), math.sin(q0)
        cz, sz = math.cos(q1), math.sin(q1)
        # R = Ry(q0) @ Rz(q1)
        R[0, 0] = cy * cz
        R[0, 1] = -cy * sz
        R[0, 2] = sy
        R[1, 0] = sz
        R[1, 1] = cz
        R[1, 2] = 0.0
        R[2, 0] = -sy * cz
        R[2, 1] = sy * sz
        R[2, 2] = cy
    elif jt == J_REVOLUTE_Y:
        c, s = math.cos(q0), math.sin(q0)
        R[0, 0] = c
        R[0, 2] = s
        R[2, 0] = -s
        R[2, 2] = c
    elif jt == J_REVOLUTE_Z:
        c, s = math.cos(q0), math.sin(q0)
        R[0, 0] = c
        R[0, 1] = -s
        R[1, 0] = s
        R[1, 1] = c
    elif jt == J_PRISMATIC_AXIAL:
        t[0] = q0
        c, s = math.cos(q1), math.sin(q1)
        R[1, 1] = c
        R[1, 2] = -s
        R[2, 1] = s
        R[2, 2] = c
    return R, t


@njit(cache=True)
def _joint_subspace(jt, q0, q1, qd0, qd1):
    """Motion subspace S (6x2, angular rows first), bias cJ = Sdot*qdot."""
    S = np.zeros((6, 2))
    cJ = np.zeros(6)
    if jt == J_PRISMATIC_X:
        S[3, 0] = 1.0
    elif jt == J_UNIVERSAL_YZ:
        cz, sz = math.cos(q1), math.sin(q1)
        # First axis y expressed in child coords: Rz(q1)^T @ ey
        S[0, 0] = sz
        S[1, 0] = cz
        S[2, 1] = 1.0
        # d/dt of that axis: qd1 * Rz(q1)^T @ ex
        cJ[0] = qd0 * qd1 * cz
        cJ[1] = -qd0 * qd1 * sz
    elif jt == J_REVOLUTE_Y:
        S[1, 0] = 1.0
    elif jt == J_REVOLUTE_Z:
        S[2, 0] = 1.0
    elif jt == J_PRISMATIC_AXIAL:
        S[3, 0] = 1.0
        S[0, 1] = 1.0
    return S, cJ


@njit(cache=True)
def _spatial_inertia(mass, com, inertia_com):
    I6 = np.zeros((6, 6))
    C = _skew(com)
    I6[0:3, 0:3] = inertia_com + mass * (C @ C.T)
    I6[0:3, 3:6] = mass * C
    I6[3:6, 0:3] = mass * C.T
    I6[3:6, 3:6] = mass * np.eye(3)
    return I6


@njit(cache=True, inline="always")
def _xform_motion(E, r):
    """Spatial motion transform child<-parent for rotation E, offset r."""
    X = np.zeros((6, 6))
    X[0:3, 0:3] = E
    X[3:6, 3:6] = E
    X[3:6, 0:3] = -E @ _skew(r)
    return X


@njit(cache=True, inline="always")
def _crm(v):
    """Motion-vector cross product matrix."""
    M = np.zeros((6, 6))
    w = _skew(v[0:3])
    M[0:3, 0:3] = w
    M[3:6, 3:6] = w
    M[3:6, 0:3] = _skew(v[3:6])
    return M


@njit(cache=True, inline="always")
def _crf(v):
    """Force-vector cross product matrix (dual of _crm)."""
    return -_crm(v).T


# ---------------------------------------------------------------------------
# Forward kinematics (world frame): poses and velocities
# ---------------------------------------------------------------------------

@njit(cache=True)
def fk_kernel(jtype, offset, qi, q, qd, base_pos, base_rot):
    """World rotation, origin, angular velocity, origin velocity per body.

    Allocation-free inner loop: joint rotations are built into scratch and
    composed manually; relative velocities use the sparse joint subspaces.
    """
    n = jtype.shape[0]
    Rw = np.zeros((n, 3, 3))
    pw = np.zeros((n, 3))
    ww = np.zeros((n, 3))
    vw = np.zeros((n, 3))
    Rj = np.empty((3, 3))
    for i in range(n):
        jt = jtype[i]
        k = qi[i]
        q0 = q[k]
        qd0 = qd[k]
        two = jt == J_UNIVERSAL_YZ or jt == J_PRISMATIC_AXIAL
        q1 = q[k + 1] if two else 0.0
        qd1 = qd[k + 1] if two else 0.0
        # joint rotation (child axes in parent coords) and local translation
        tx = 0.0
        Rj[0, 0] = 1.0
        Rj[0, 1] = 0.0
        Rj[0, 2] = 0.0
        Rj[1, 0] = 0.0
        Rj[1, 1] = 1.0
        Rj[1, 2] = 0.0
        Rj[2, 0] = 0.0
        Rj[2, 1] = 0.0
        Rj[2, 2] = 1.0
        # relative angular / linear velocity in child coords
        wrx = 0.0
        wry = 0.0
        wrz = 0.0
        vrx = 0.0
        if jt == J_PRISMATIC_X:
            tx = q0
            vrx = qd0
        elif jt == J_UNIVERSAL_YZ:
            cy = math.cos(q0)
            sy = math.sin(q0)
            cz = math.cos(q1)
            sz = math.sin(q1)
            Rj[0, 0] = cy * cz
            Rj[0, 1] = -cy * sz
            Rj[0, 2] = sy
            Rj[1, 0] = sz
            Rj[1, 1] = cz
            Rj[1, 2] = 0.0
            Rj[2, 0] = -sy * cz
            Rj[2, 1] = sy * sz
            Rj[2, 2] = cy
            wrx = sz * qd0
            wry = cz * qd0
            wrz = qd1
        elif jt == J_REVOLUTE_Y:
            c = math.cos(q0)
            s = math.sin(q0)
            Rj[0, 0] = c
            Rj[0, 2] = s
            Rj[2, 0] = -s
            Rj[2, 2] = c
            wry = qd0
        elif jt == J_REVOLUTE_Z:
            c = math.cos(q0)
            s = math.sin(q0)
            Rj[0, 0] = c
            Rj[0, 1] = -s
            Rj[1, 0] = s
            Rj[1, 1] = c
            wrz = qd0
        else:  # J_PRISMATIC_AXIAL
            tx = q0
            vrx = qd0
            c = math.cos(q1)
            s = math.sin(q1)
            Rj[1, 1] = c
            Rj[1, 2] = -s
            Rj[2, 1] = s
            Rj[2, 2] = c
            wrx = qd1
        rx = offset[i, 0] + tx
        ry = offset[i, 1]
        rz = offset[i, 2]
        if i == 0:
            Rp = base_rot
            ppx = base_pos[0]
            ppy = base_pos[1]
            ppz = base_pos[2]
            wpx = 0.0
            wpy = 0.0
            wpz = 0.0
            vpx = 0.0
            vpy = 0.0
            vpz = 0.0
        else:
            Rp = Rw[i - 1]
            ppx = pw[i - 1, 0]
            ppy = pw[i - 1, 1]
            ppz = pw[i - 1, 2]
            wpx = ww[i - 1, 0]
            wpy = ww[i - 1, 1]
            wpz = ww[i - 1, 2]
            vpx = vw[i - 1, 0]
            vpy = vw[i - 1, 1]
            vpz = vw[i - 1, 2]
        # joint offset in world coords
        ox = Rp[0, 0] * rx + Rp[0, 1] * ry + Rp[0, 2] * rz
        oy = Rp[1, 0] * rx + Rp[1, 1] * ry + Rp[1, 2] * rz
        oz = Rp[2, 0] * rx + Rp[2, 1] * ry + Rp[2, 2] * rz
        for a in range(3):
            for b in range(3):
                Rw[i, a, b] = (Rp[a, 0] * Rj[0, b] + Rp[a, 1] * Rj[1, b]
                               + Rp[a, 2] * Rj[2, b])
        pw[i, 0] = ppx + ox
        pw[i, 1] = ppy + oy
        pw[i, 2] = ppz + oz
        # world angular velocity: parent + R_i * w_rel
        ww[i, 0] = wpx + Rw[i, 0, 0] * wrx + Rw[i, 0, 1] * wry + Rw[i, 0, 2] * wrz
        ww[i, 1] = wpy + Rw[i, 1, 0] * wrx + Rw[i, 1, 1] * wry + Rw[i, 1, 2] * wrz
        ww[i, 2] = wpz + Rw[i, 2, 0] * wrx + Rw[i, 2, 1] * wry + Rw[i, 2, 2] * wrz
        # world origin velocity: parent + w_parent x offset + R_i * v_rel
        vw[i, 0] = vpx + (wpy * oz - wpz * oy) + Rw[i, 0, 0] * vrx
        vw[i, 1] = vpy + (wpz * ox - wpx * oz) + Rw[i, 1, 0] * vrx
        vw[i, 2] = vpz + (wpx * oy - wpy * ox) + Rw[i, 2, 0] * vrx
    return Rw, pw, ww, vw


# ---------------------------------------------------------------------------
# Articulated-body forward dynamics
# ---------------------------------------------------------------------------

@njit(cache=True)
def aba_kernel(jtype, offset, qi, I6, q, qd, tau, fext_world, armature,
               base_rot, gravity):
    """Joint accelerations of the chain (articulated-body recursion).

    ``tau`` is the total explicit generalized force per dof (actuation plus
    any spring/damper terms the caller wants applied explicitly).
    ``fext_world`` holds one world-frame wrench per body, rows
    [torque(3), force(3)], acting at the body frame origin.  ``armature``
    adds a diagonal joint-space inertia (used for implicit integration of
    spring/damper terms; zero for the plain dynamics contract).  ``I6`` is
    the per-body spatial inertia about the body origin.

    Inner loops are written out manually: this is the throughput-critical
    kernel of the whole simulator, and small-array temporaries dominate the
    naive formulation's cost.
    """
    n = jtype.shape[0]
    Xup = np.zeros((n, 6, 6))
    Ss = np.zeros((n, 6, 2))
    vs = np.zeros((n, 6))
    cs = np.zeros((n, 6))
    IA = np.zeros((n, 6, 6))
    pA = np.zeros((n, 6))
    Rw = np.zeros((n, 3, 3))
    Us = np.zeros((n, 6, 2))
    Dinv = np.zeros((n, 2, 2))
    us = np.zeros((n, 2))
    Rj = np.empty((3, 3))
    Ia = np.empty((6, 6))
    T = np.empty((6, 6))
    vJ = np.empty(6)
    tmp6 = np.empty(6)

    for i in range(n):
        jt = jtype[i]
        k = qi[i]
        two = jt == J_UNIVERSAL_YZ or jt == J_PRISMATIC_AXIAL
        q0 = q[k]
        q1 = q[k + 1] if two else 0.0
        qd0 = qd[k]
        qd1 = qd[k + 1] if two else 0.0
        tx = 0.0
        for a in range(3):
            for b in range(3):
                Rj[a, b] = 1.0 if a == b else 0.0
        S = Ss[i]
        cJx = 0.0
        cJy = 0.0
        if jt == J_PRISMATIC_X:
            tx = q0
            S[3, 0] = 1.0
        elif jt == J_UNIVERSAL_YZ:
            cy = math.cos(q0)
            sy = math.sin(q0)
            cz = math.cos(q1)
            sz = math.sin(q1)
            Rj[0, 0] = cy * cz
            Rj[0, 1] = -cy * sz
            Rj[0, 2] = sy
            Rj[1, 0] = sz
            Rj[1, 1] = cz
            Rj[2, 0] = -sy * cz
            Rj[2, 1] = sy * sz
            Rj[2, 2] = cy
            S[0, 0] = sz
            S[1, 0] = cz
            S[2, 1] = 1.0
            cJx = qd0 * qd1 * cz
            cJy = -qd0 * qd1 * sz
        elif jt == J_REVOLUTE_Y:
            c = math.cos(q0)
            s = math.sin(q0)
            Rj[0, 0] = c
            Rj[0, 2] = s
            Rj[2, 0] = -s
            Rj[2, 2] = c
            S[1, 0] = 1.0
        elif jt == J_REVOLUTE_Z:
            c = math.cos(q0)
            s = math.sin(q0)
            Rj[0, 0] = c
            Rj[0, 1] = -s
            Rj[1, 0] = s
            Rj[1, 1] = c
            S[2, 0] = 1.0
        else:  # J_PRISMATIC_AXIAL
            tx = q0
            c = math.cos(q1)
            s = math.sin(q1)
            Rj[1, 1] = c
            Rj[1, 2] = -s
            Rj[2, 1] = s
            Rj[2, 2] = c
            S[3, 0] = 1.0
            S[0, 1] = 1.0
        rx = offset[i, 0] + tx
        ry = offset[i, 1]
        rz = offset[i, 2]
        # X = [[E, 0], [-E skew(r), E]] with E = Rj^T
        X = Xup[i]
        for a in range(3):
            ea0 = Rj[0, a]
            ea1 = Rj[1, a]
            ea2 = Rj[2, a]
            X[a, 0] = ea0
            X[a, 1] = ea1
            X[a, 2] = ea2
            X[a + 3, 3] = ea0
            X[a + 3, 4] = ea1
            X[a + 3, 5] = ea2
            X[a + 3, 0] = -(ea1 * rz - ea2 * ry)
            X[a + 3, 1] = -(ea2 * rx - ea0 * rz)
            X[a + 3, 2] = -(ea0 * ry - ea1 * rx)
        # world rotation of the body (external wrench transforms)
        if i == 0:
            Rp = base_rot
        else:
            Rp = Rw[i - 1]
        for a in range(3):
            for b in range(3):
                Rw[i, a, b] = (Rp[a, 0] * Rj[0, b] + Rp[a, 1] * Rj[1, b]
                               + Rp[a, 2] * Rj[2, b])
        # vJ and v
        for r in range(6):
            vJ[r] = S[r, 0] * qd0 + S[r, 1] * qd1
        v = vs[i]
        if i == 0:
            for r in range(6):
                v[r] = vJ[r]
        else:
            vp = vs[i - 1]
            for r in range(6):
                acc = 0.0
                for cc in range(6):
                    acc += X[r, cc] * vp[cc]
                v[r] = acc + vJ[r]
        # c = cJ + crm(v) vJ
        wx = v[0]
        wy = v[1]
        wz = v[2]
        lx = v[3]
        ly = v[4]
        lz = v[5]
        cs[i, 0] = cJx + (wy * vJ[2] - wz * vJ[1])
        cs[i, 1] = cJy + (wz * vJ[0] - wx * vJ[2])
        cs[i, 2] = (wx * vJ[1] - wy * vJ[0])
        cs[i, 3] = (wy * vJ[5] - wz * vJ[4]) + (ly * vJ[2] - lz * vJ[1])
        cs[i, 4] = (wz * vJ[3] - wx * vJ[5]) + (lz * vJ[0] - lx * vJ[2])
        cs[i, 5] = (wx * vJ[4] - wy * vJ[3]) + (lx * vJ[1] - ly * vJ[0])
        # IA = I6, pA = crf(v) (I6 v) - R^T f_ext
        Ib = I6[i]
        for a in range(6):
            for b in range(6):
                IA[i, a, b] = Ib[a, b]
        for r in range(6):
            acc = 0.0
            for cc in range(6):
                acc += Ib[r, cc] * v[cc]
            tmp6[r] = acc
        hx = tmp6[0]
        hy = tmp6[1]
        hz = tmp6[2]
        gx = tmp6[3]
        gy = tmp6[4]
        gz = tmp6[5]
        R = Rw[i]
        bta = R[0, 0] * fext_world[i, 0] + R[1, 0] * fext_world[i, 1] + R[2, 0] * fext_world[i, 2]
        btb = R[0, 1] * fext_world[i, 0] + R[1, 1] * fext_world[i, 1] + R[2, 1] * fext_world[i, 2]
        btc = R[0, 2] * fext_world[i, 0] + R[1, 2] * fext_world[i, 1] + R[2, 2] * fext_world[i, 2]
        bfa = R[0, 0] * fext_world[i, 3] + R[1, 0] * fext_world[i, 4] + R[2, 0] * fext_world[i, 5]
        bfb = R[0, 1] * fext_world[i, 3] + R[1, 1] * fext_world[i, 4] + R[2, 1] * fext_world[i, 5]
        bfc = R[0, 2] * fext_world[i, 3] + R[1, 2] * fext_world[i, 4] + R[2, 2] * fext_world[i, 5]
        pA[i, 0] = (wy * hz - wz * hy) + (ly * gz - lz * gy) - bta
        pA[i, 1] = (wz * hx - wx * hz) + (lz * gx - lx * gz) - btb
        pA[i, 2] = (wx * hy - wy * hx) + (lx * gy - ly * gx) - btc
        pA[i, 3] = (wy * gz - wz * gy) - bfa
        pA[i, 4] = (wz * gx - wx * gz) - bfb
        pA[i, 5] = (wx * gy - wy * gx) - bfc

    for i in range(n - 1, -1, -1):
        jt = jtype[i]
        k = qi[i]
        two = jt == J_UNIVERSAL_YZ or jt == J_PRISMATIC_AXIAL
        nd = 2 if two else 1
        S = Ss[i]
        U = Us[i]
        for d in range(nd):
            for r in range(6):
                acc = 0.0
                for cc in range(6):
                    acc += IA[i, r, cc] * S[cc, d]
                U[r, d] = acc
        d00 = armature[k]
        d01 = 0.0
        d11 = 0.0
        for r in range(6):
            d00 += S[r, 0] * U[r, 0]
        if nd == 2:
            d11 = armature[k + 1]
            for r in range(6):
                d01 += S[r, 0] * U[r, 1]
                d11 += S[r, 1] * U[r, 1]
        Di = Dinv[i]
        if nd == 1:
            Di[0, 0] = 1.0 / d00
            Di[0, 1] = 0.0
            Di[1, 0] = 0.0
            Di[1, 1] = 0.0
        else:
            det = d00 * d11 - d01 * d01
            Di[0, 0] = d11 / det
            Di[0, 1] = -d01 / det
            Di[1, 0] = -d01 / det
            Di[1, 1] = d00 / det
        for d in range(nd):
            acc = 0.0
            for r in range(6):
                acc += S[r, d] * pA[i, r]
            us[i, d] = tau[k + d] - acc
        if i > 0:
            # Ia = IA - U Dinv U^T ; pa = pA + Ia c + U Dinv u
            u0 = us[i, 0]
            u1 = us[i, 1]
            for r in range(6):
                ud0 = U[r, 0] * Di[0, 0] + U[r, 1] * Di[1, 0]
                ud1 = U[r, 0] * Di[0, 1] + U[r, 1] * Di[1, 1]
                for cc in range(6):
                    Ia[r, cc] = IA[i, r, cc] - ud0 * U[cc, 0] - ud1 * U[cc, 1]
                tmp6[r] = pA[i, r] + ud0 * u0 + ud1 * u1
            for r in range(6):
                acc = 0.0
                for cc in range(6):
                    acc += Ia[r, cc] * cs[i, cc]
                tmp6[r] += acc
            X = Xup[i]
            # T = Ia X ; IA[parent] += X^T T ; pA[parent] += X^T pa
            for r in range(6):
                for cc in range(6):
                    acc = 0.0
                    for e in range(6):
                        acc += Ia[r, e] * X[e, cc]
                    T[r, cc] = acc
            for r in range(6):
                for cc in range(6):
                    acc = 0.0
                    for e in range(6):
                        acc += X[e, r] * T[e, cc]
                    IA[i - 1, r, cc] += acc
                acc2 = 0.0
                for e in range(6):
                    acc2 += X[e, r] * tmp6[e]
                pA[i - 1, r] += acc2

    qdd = np.zeros(q.shape[0])
    a_prev = np.zeros(6)
    a_cur = np.zeros(6)
    a_prev[3] = -(base_rot[0, 0] * gravity[0] + base_rot[1, 0] * gravity[1]
                  + base_rot[2, 0] * gravity[2])
    a_prev[4] = -(base_rot[0, 1] * gravity[0] + base_rot[1, 1] * gravity[1]
                  + base_rot[2, 1] * gravity[2])
    a_prev[5] = -(base_rot[0, 2] * gravity[0] + base_rot[1, 2] * gravity[1]
                  + base_rot[2, 2] * gravity[2])
    for i in range(n):
        jt = jtype[i]
        k = qi[i]
        two = jt == J_UNIVERSAL_YZ or jt == J_PRISMATIC_AXIAL
        nd = 2 if two else 1
        X = Xup[i]
        for r in range(6):
            acc = 0.0
            for cc in range(6):
                acc += X[r, cc] * a_prev[cc]
            a_cur[r] = acc + cs[i, r]
        r0 = us[i, 0]
        r1 = us[i, 1]
        for r in range(6):
            r0 -= Us[i, r, 0] * a_cur[r]
            r1 -= Us[i, r, 1] * a_cur[r]
        qdj0 = Dinv[i, 0, 0] * r0 + Dinv[i, 0, 1] * r1
        qdd[k] = qdj0
        for r in range(6):
            a_cur[r] += Ss[i, r, 0] * qdj0
        if nd == 2:
            qdj1 = Dinv[i, 1, 0] * r0 + Dinv[i, 1, 1] * r1
            qdd[k + 1] = qdj1
            for r in range(6):
                a_cur[r] += Ss[i, r, 1] * qdj1
        for r in range(6):
            a_prev[r] = a_cur[r]
    return qdd


# ---------------------------------------------------------------------------
# Dense path: CRBA mass matrix and RNEA bias forces (cross-check route)
# ---------------------------------------------------------------------------

@njit(cache=True)
def crba_kernel(jtype, offset, qi, mass, com, inertia, q, armature):
    n = jtype.shape[0]
    nq = armature.shape[0]
    Xup = np.zeros((n, 6, 6))
    Ss = np.zeros((n, 6, 2))
    Ic = np.zeros((n, 6, 6))
    for i in range(n):
        jt = jtype[i]
        k = qi[i]
        two = jt == J_UNIVERSAL_YZ or jt == J_PRISMATIC_AXIAL
        q0 = q[k]
        q1 = q[k + 1] if two else 0.0
        Rj, tl = _joint_geometry(jt, q0, q1)
        S, _ = _joint_subspace(jt, q0, q1, 0.0, 0.0)
        Xup[i] = _xform_motion(Rj.T, offset[i] + tl)
        Ss[i] = S
        Ic[i] = _spatial_inertia(mass[i], com[i], inertia[i])

    M = np.zeros((nq, nq))
    for i in range(n - 1, -1, -1):
        jt = jtype[i]
        two = jt == J_UNIVERSAL_YZ or jt == J_PRISMATIC_AXIAL
        nd = 2 if two else 1
        ki = qi[i]
        if i > 0:
            X = Xup[i]
            Ic[i - 1] += X.T @ Ic[i] @ X
        F = Ic[i] @ Ss[i]
        for a in range(nd):
            for b in range(nd):
                acc = 0.0
                for r in range(6):
                    acc += Ss[i, r, a] * F[r, b]
                M[ki + a, ki + b] = acc
        Fj = F.copy()
        j = i
        while j > 0:
            Fj = Xup[j].T @ Fj
            j -= 1
            jt2 = jtype[j]
            nd2 = 2 if (jt2 == J_UNIVERSAL_YZ or jt2 == J_PRISMATIC_AXIAL) else 1
            kj = qi[j]
            for a in range(nd):
                for b in range(nd2):
                    acc = 0.0
                    for r in range(6):
                        acc += Fj[r, a] * Ss[j, r, b]
                    M[ki + a, kj + b] = acc
                    M[kj + b, ki + a] = acc
    for d in range(nq):
        M[d, d] += armature[d]
    return M


@njit(cache=True)
def rnea_bias_kernel(jtype, offset, qi, mass, com, inertia,
                     q, qd, fext_world, base_rot, gravity):
    """Generalized bias forces: C(q,qd)*qd + g(q) - J^T f_ext."""
    n = jtype.shape[0]
    Xup = np.zeros((n, 6, 6))
    Ss = np.zeros((n, 6, 2))
    vs = np.zeros((n, 6))
    fs = np.zeros((n, 6))
    Rw = np.zeros((n, 3, 3))

    Rp = base_rot.copy()
    a_prev = np.zeros(6)
    a_prev[3:6] = -(base_rot.T @ gravity)
    v_prev = np.zeros(6)
    for i in range(n):
        jt = jtype[i]
        k = qi[i]
        two = jt == J_UNIVERSAL_YZ or jt == J_PRISMATIC_AXIAL
        q0 = q[k]
        q1 = q[k + 1] if two else 0.0
        qd0 = qd[k]
        qd1 = qd[k + 1] if two else 0.0
        Rj, tl = _joint_geometry(jt, q0, q1)
        S, cJ = _joint_subspace(jt, q0, q1, qd0, qd1)
        X = _xform_motion(Rj.T, offset[i] + tl)
        Xup[i] = X
        Ss[i] = S
        Rw_i = Rp @ Rj
        Rw[i] = Rw_i
        Rp = Rw_i
        vJ = S[:, 0] * qd0 + S[:, 1] * qd1
        v = X @ v_prev + vJ
        a = X @ a_prev + cJ + _crm(v) @ vJ  # qdd = 0
        vs[i] = v
        I6 = _spatial_inertia(mass[i], com[i], inertia[i])
        fx = np.zeros(6)
        fx[0:3] = Rw_i.T @ fext_world[i, 0:3]
        fx[3:6] = Rw_i.T @ fext_world[i, 3:6]
        fs[i] = I6 @ a + _crf(v) @ (I6 @ v) - fx
        v_prev = v
        a_prev = a

    bias = np.zeros(qd.shape[0])
    for i in range(n - 1, -1, -1):
        jt = jtype[i]
        k = qi[i]
        two = jt == J_UNIVERSAL_YZ or jt == J_PRISMATIC_AXIAL
        nd = 2 if two else 1
        for d in range(nd):
            acc = 0.0
            for r in range(6):
                acc += Ss[i, r, d] * fs[i, r]
            bias[k + d] = acc
        if i > 0:
            fs[i - 1] += Xup[i].T @ fs[i]
    return bias


@njit(cache=True)
def integrate_kernel(q, qd, qdd, dt, qlim_lo, qlim_hi):
    """Semi-implicit Euler with limit clamping and velocity zeroing."""
    nq = q.shape[0]
    qd_new = np.empty(nq)
    q_new = np.empty(nq)
    for k in range(nq):
        vd = qd[k] + dt * qdd[k]
        xq = q[k] + dt * vd
        if xq < qlim_lo[k]:
            xq = qlim_lo[k]
            vd = 0.0
        elif xq > qlim_hi[k]:
            xq = qlim_hi[k]
            vd = 0.0
        qd_new[k] = vd
        q_new[k] = xq
    return q_new, qd_new


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def _rot_to_quat(R: np.ndarray) -> np.ndarray:
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    quat = np.array([w, x, y, z])
    return quat / np.linalg.norm(quat)


def zero_state(spec: CatheterSpec) -> ChainState:
    return ChainState(np.zeros(spec.nq), np.zeros(spec.nq), 0.0)


def forward_kinematics(spec: CatheterSpec, q: np.ndarray,
                       model: ChainModel | None = None):
    """Poses of every link plus the tip point h (distal end of last link).

    With the default model the chain base sits at the origin with the link
    axis along world +x, so the straight tip lands at
    ``insertion_depth + n_links * link_length``.
    """
    model = model if model is not None else catheter_model(spec)
    q = model.check_q(q)
    Rw, pw, _, _ = fk_kernel(model.jtype, model.offset, model.qi,
                             q, np.zeros_like(q), model.base_pos, model.base_rot)
    poses = [BodyPose(pw[i].copy(), _rot_to_quat(Rw[i])) for i in range(model.n_bodies)]
    tip = pw[-1] + Rw[-1] @ np.array([spec.link_length, 0.0, 0.0])
    return poses, tip


def link_segments(spec: CatheterSpec, q: np.ndarray,
                  model: ChainModel | None = None):
    """Capsule segment endpoints (n_links x 3 each) for contact queries."""
    model = model if model is not None else catheter_model(spec)
    q = model.check_q(q)
    Rw, pw, _, _ = fk_kernel(model.jtype, model.offset, model.qi,
                             q, np.zeros_like(q), model.base_pos, model.base_rot)
    ax = np.array([spec.link_length, 0.0, 0.0])
    p1 = pw + np.einsum("nij,j->ni", Rw, ax)
    return pw, p1


def _explicit_tau(model: ChainModel, q, qd, joint_torques):
    return joint_torques - model.stiffness * q - model.damping * qd


def forward_dynamics(spec: CatheterSpec, state: ChainState,
                     joint_torques: np.ndarray,
                     external_wrenches: np.ndarray | None = None,
                     model: ChainModel | None = None) -> np.ndarray:
    """Joint accelerations from the manipulator equation.

    Satisfies M(q) qdd + C(q,qd) + g(q) + damping + stiffness
    = joint_torques + J^T f_ext, with damping/stiffness taken from the spec.
    ``external_wrenches`` is (n_links, 6) world-frame [torque, force] rows
    applied at link frame origins.
    """
    model = model if model is not None else catheter_model(spec)
    q = model.check_q(state.q)
    qd = model.check_q(state.qdot)
    tau = model.check_q(np.asarray(joint_torques, dtype=np.float64))
    if external_wrenches is None:
        fext = np.zeros((model.n_bodies, 6))
    else:
        fext = np.asarray(external_wrenches, dtype=np.float64)
        if fext.shape != (model.n_bodies, 6):
            raise LayoutError(
                f"external_wrenches must have shape ({model.n_bodies}, 6)")
    for arr in (q, qd, tau, fext):
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite value in dynamics input")
    tau_eff = _explicit_tau(model, q, qd, tau)
    return aba_kernel(model.jtype, model.offset, model.qi, model.I6,
                      q, qd, tau_eff, fext, np.zeros(model.nq),
                      model.base_rot, model.gravity)


def mass_matrix(spec_or_model, q: np.ndarray, armature: np.ndarray | None = None):
    """Dense joint-space inertia matrix (cross-check path)."""
    model = (spec_or_model if isinstance(spec_or_model, ChainModel)
             else catheter_model(spec_or_model))
    q = model.check_q(q)
    arm = np.zeros(model.nq) if armature is None else armature
    return crba_kernel(model.jtype, model.offset, model.qi, model.mass,
                       model.com, model.inertia, q, arm)


def bias_forces(spec_or_model, q, qd, external_wrenches=None):
    """C(q,qd) + g(q) - J^T f_ext via the recursive Newton-Euler pass."""
    model = (spec_or_model if isinstance(spec_or_model, ChainModel)
             else catheter_model(spec_or_model))
    q = model.check_q(q)
    qd = model.check_q(qd)
    fext = (np.zeros((model.n_bodies, 6)) if external_wrenches is None
            else np.asarray(external_wrenches, dtype=np.float64))
    return rnea_bias_kernel(model.jtype, model.offset, model.qi, model.mass,
                            model.com, model.inertia, q, qd, fext,
                            model.base_rot, model.gravity)


def forward_dynamics_dense(spec: CatheterSpec, state: ChainState,
                           joint_torques, external_wrenches=None,
                           model: ChainModel | None = None) -> np.ndarray:
    """Dense-path forward dynamics used to cross-check the recursion."""
    model = model if model is not None else catheter_model(spec)
    q = model.check_q(state.q)
    qd = model.check_q(state.qdot)
    fext = (np.zeros((model.n_bodies, 6)) if external_wrenches is None
            else np.asarray(external_wrenches, dtype=np.float64))
    tau_eff = _explicit_tau(model, q, qd, np.asarray(joint_torques, dtype=np.float64))
    M = mass_matrix(model, q)
    b = bias_forces(model, q, qd, fext)
    return np.linalg.solve(M, tau_eff - b)


def actuation_forces(spec: CatheterSpec, state: ChainState,
                     command: ActuationCommand) -> np.ndarray:
    """Generalized actuation vector: tip torques plus the insertion servo.

    The insertion joint runs a velocity servo F = servo_gain * (v_cmd - v);
    the -v part is realized through the joint damping entry, so only the
    feedforward servo_gain * v_cmd term appears here.
    """
    cmd = command.clamped()
    tau = np.zeros(spec.nq)
    tau[0] = spec.servo_gain * (cmd.insert * spec.insertion_gain)
    if spec.axial_rotation:
        tau[1] = spec.servo_gain * 0.05 * (cmd.axial * spec.axial_gain)
    tau[spec.actuated_bend_dofs] = cmd.bend * spec.torque_gain
    return tau


def step(spec: CatheterSpec, state: ChainState, command: ActuationCommand,
         contact_forces=None, dt: float = 0.004,
         model: ChainModel | None = None) -> ChainState:
    """One semi-implicit Euler substep under a normalized command.

    ``contact_forces`` is an iterable of solved contact forces (see
    ``cathnav.contacts``); their world wrenches are applied to the links.
    Joint spring/damper terms integrate implicitly (armature trick), which
    is what keeps the stiff catheter stable at dt = 4 ms.
    """
    if dt <= 0.0:
        raise NumericError("dt must be > 0")
    model = model if model is not None else catheter_model(spec)
    q = model.check_q(state.q)
    qd = model.check_q(state.qdot)
    fext = np.zeros((model.n_bodies, 6))
    if contact_forces:
        Rw, pw, _, _ = fk_kernel(model.jtype, model.offset, model.qi,
                                 q, qd, model.base_pos, model.base_rot)
        for cf in contact_forces:
            i = cf.contact.link_id
            f = cf.world_force()
            fext[i, 3:6] += f
            fext[i, 0:3] += np.cross(cf.contact.point - pw[i], f)
    tau = actuation_forces(spec, state, command)
    q_new, qd_new = _step_arrays(model, q, qd, tau, fext, dt)
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qd_new))):
        raise IntegrationDivergedError("non-finite state after integration step")
    return ChainState(q_new, qd_new, state.time + dt)


def _step_arrays(model: ChainModel, q, qd, tau_applied, fext, dt):
    """Array-level substep shared by ``step`` and the environment fast path."""
    armature = dt * model.damping + dt * dt * model.stiffness
    tau_eff = (tau_applied - model.stiffness * q
               - (model.damping + dt * model.stiffness) * qd)
    qdd = aba_kernel(model.jtype, model.offset, model.qi, model.I6,
                     q, qd, tau_eff, fext, armature,
                     model.base_rot, model.gravity)
    return integrate_kernel(q, qd, qdd, dt, model.qlim_lo, model.qlim_hi)


def kinetic_energy(model: ChainModel, q, qd) -> float:
    """Kinetic energy from world link velocities (independent of CRBA)."""
    q = model.check_q(q)
    qd = model.check_q(qd)
    Rw, pw, ww, vw = fk_kernel(model.jtype, model.offset, model.qi,
                               q, qd, model.base_pos, model.base_rot)
    ke = 0.0
    for i in range(model.n_bodies):
        c_w = Rw[i] @ model.com[i]
        v_com = vw[i] + np.cross(ww[i], c_w)
        I_w = Rw[i] @ model.inertia[i] @ Rw[i].T
        ke += 0.5 * model.mass[i] * float(v_com @ v_com)
        ke += 0.5 * float(ww[i] @ I_w @ ww[i])
    return ke


def potential_energy(model: ChainModel, q) -> float:
    """Gravitational plus joint-spring potential energy."""
    q = model.check_q(q)
    Rw, pw, _, _ = fk_kernel(model.jtype, model.offset, model.qi,
                             q, np.zeros_like(q), model.base_pos, model.base_rot)
    pe = 0.0
    for i in range(model.n_bodies):
        com_w = pw[i] + Rw[i] @ model.com[i]
        pe -= model.mass[i] * float(model.gravity @ com_w)
    pe += 0.5 * float(np.sum(model.stiffness * q * q))
    return pe


def total_energy(model: ChainModel, q, qd) -> float:
    return kinetic_energy(model, q, qd) + potential_energy(model, q)
