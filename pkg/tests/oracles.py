"""Independent numerical oracles used across the test suite.

The dynamics oracle here never calls the package's dynamics code: it builds
poses from its own forward kinematics and derives accelerations from the
Euler-Lagrange equations by numerical differentiation of kinetic/potential
energy.  It is deliberately slow and simple.
"""

import numpy as np

# Joint type codes mirrored from the documented chain layout.
PRISMATIC_X = 0
UNIVERSAL_YZ = 1
REVOLUTE_Y = 2
REVOLUTE_Z = 3
PRISMATIC_AXIAL = 4

_NDOF = {PRISMATIC_X: 1, UNIVERSAL_YZ: 2, REVOLUTE_Y: 1, REVOLUTE_Z: 1,
         PRISMATIC_AXIAL: 2}


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_log(R):
    """Exact rotation vector of a rotation matrix (small-angle safe)."""
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s2 = 0.5 * np.linalg.norm(vee)          # sin(theta)
    c = 0.5 * (np.trace(R) - 1.0)           # cos(theta)
    theta = np.arctan2(s2, c)
    if s2 < 1e-12:
        return 0.5 * vee                     # theta/sin(theta) -> 1
    return vee * (0.5 * theta / s2)


class OracleChain:
    """Plain-python mirror of a serial chain definition."""

    def __init__(self, jtypes, offsets, masses, coms, inertias,
                 damping, stiffness, gravity, base_pos=None, base_rot=None):
        self.jtypes = list(jtypes)
        self.offsets = [np.asarray(o, float) for o in offsets]
        self.masses = list(masses)
        self.coms = [np.asarray(c, float) for c in coms]
        self.inertias = [np.asarray(I, float) for I in inertias]
        self.damping = np.asarray(damping, float)
        self.stiffness = np.asarray(stiffness, float)
        self.gravity = np.asarray(gravity, float)
        self.base_pos = np.zeros(3) if base_pos is None else np.asarray(base_pos, float)
        self.base_rot = np.eye(3) if base_rot is None else np.asarray(base_rot, float)
        self.nq = sum(_NDOF[t] for t in self.jtypes)

    @staticmethod
    def from_model(model):
        return OracleChain(model.jtype.tolist(),
                           [model.offset[i] for i in range(model.n_bodies)],
                           model.mass.tolist(),
                           [model.com[i] for i in range(model.n_bodies)],
                           [model.inertia[i] for i in range(model.n_bodies)],
                           model.damping, model.stiffness, model.gravity,
                           model.base_pos, model.base_rot)

    def fk(self, q):
        """World rotations and origins per body."""
        Rs, ps = [], []
        R, p = self.base_rot, self.base_pos
        k = 0
        for jt, off in zip(self.jtypes, self.offsets):
            if jt == PRISMATIC_X:
                Rj, t = np.eye(3), np.array([q[k], 0.0, 0.0])
            elif jt == UNIVERSAL_YZ:
                Rj, t = _ry(q[k]) @ _rz(q[k + 1]), np.zeros(3)
            elif jt == REVOLUTE_Y:
                Rj, t = _ry(q[k]), np.zeros(3)
            elif jt == REVOLUTE_Z:
                Rj, t = _rz(q[k]), np.zeros(3)
            elif jt == PRISMATIC_AXIAL:
                Rj, t = _rx(q[k + 1]), np.array([q[k], 0.0, 0.0])
            else:
                raise ValueError(jt)
            p = p + R @ (off + t)
            R = R @ Rj
            Rs.append(R)
            ps.append(p)
            k += _NDOF[jt]
        return Rs, ps

    def body_velocities(self, q, qd, h=1e-3):
        """High-order finite-difference world angular/COM-linear velocities.

        COM velocities use a 4th-order central stencil; angular velocities
        use the exact rotation log at two step sizes with Richardson
        extrapolation, which keeps errors near roundoff.
        """
        n = len(self.jtypes)
        Rs = {}
        ps = {}
        for a in (-2, -1, 1, 2):
            Rs[a], ps[a] = self.fk(q + a * h * qd)
        omegas, vcoms = [], []
        for i in range(n):
            w1 = _rot_log(Rs[1][i] @ Rs[-1][i].T) / (2.0 * h)
            w2 = _rot_log(Rs[2][i] @ Rs[-2][i].T) / (4.0 * h)
            omegas.append((4.0 * w1 - w2) / 3.0)
            com = {a: ps[a][i] + Rs[a][i] @ self.coms[i] for a in Rs}
            vcoms.append((8.0 * (com[1] - com[-1]) - (com[2] - com[-2]))
                         / (12.0 * h))
        return omegas, vcoms

    def kinetic_energy(self, q, v):
        om, vc = self.body_velocities(q, v)
        ke = 0.0
        R0, _ = self.fk(q)
        for i in range(len(self.jtypes)):
            Iw = R0[i] @ self.inertias[i] @ R0[i].T
            ke += 0.5 * self.masses[i] * float(vc[i] @ vc[i])
            ke += 0.5 * float(om[i] @ Iw @ om[i])
        return ke

    def potential_energy(self, q):
        Rs, ps = self.fk(q)
        pe = 0.0
        for i in range(len(self.jtypes)):
            com_w = ps[i] + Rs[i] @ self.coms[i]
            pe -= self.masses[i] * float(self.gravity @ com_w)
        pe += 0.5 * float(np.sum(self.stiffness * np.asarray(q) ** 2))
        return pe

    def mass_matrix(self, q):
        """Polarization of the kinetic energy in qdot."""
        n = self.nq
        M = np.zeros((n, n))
        kes = [self.kinetic_energy(q, np.eye(n)[i]) for i in range(n)]
        for i in range(n):
            M[i, i] = 2.0 * kes[i]
        for i in range(n):
            for j in range(i + 1, n):
                v = np.zeros(n)
                v[i] = 1.0
                v[j] = 1.0
                M[i, j] = M[j, i] = self.kinetic_energy(q, v) - kes[i] - kes[j]
        return M

    def bias_vector(self, q, qd, hq=2e-3):
        """Coriolis/centrifugal plus gravity/spring gradient terms."""
        n = self.nq
        dM = np.zeros((n, n, n))  # dM[k] = dM/dq_k, 4th-order central
        for k in range(n):
            Ms = {}
            for a in (-2, -1, 1, 2):
                qa = q.copy()
                qa[k] += a * hq
                Ms[a] = self.mass_matrix(qa)
            dM[k] = (8.0 * (Ms[1] - Ms[-1]) - (Ms[2] - Ms[-2])) / (12.0 * hq)
        h = np.zeros(n)
        for k in range(n):
            acc = 0.0
            for i in range(n):
                for j in range(n):
                    acc += dM[i][k, j] * qd[i] * qd[j]
                    acc -= 0.5 * dM[k][i, j] * qd[i] * qd[j]
            h[k] = acc
        hg = 1e-3
        for k in range(n):
            pes = {}
            for a in (-2, -1, 1, 2):
                qa = q.copy()
                qa[k] += a * hg
                pes[a] = self.potential_energy(qa)
            h[k] += (8.0 * (pes[1] - pes[-1]) - (pes[2] - pes[-2])) / (12.0 * hg)
        return h

    def external_generalized_force(self, q, wrenches, hq=1e-3):
        """J^T f for world wrenches [torque, force] at body origins."""
        n = self.nq
        Q = np.zeros(n)
        for k in range(n):
            Rs, ps = {}, {}
            for a in (-2, -1, 1, 2):
                qa = q.copy()
                qa[k] += a * hq
                Rs[a], ps[a] = self.fk(qa)
            for i in range(len(self.jtypes)):
                dp = (8.0 * (ps[1][i] - ps[-1][i]) - (ps[2][i] - ps[-2][i])) \
                    / (12.0 * hq)
                w1 = _rot_log(Rs[1][i] @ Rs[-1][i].T) / (2.0 * hq)
                w2 = _rot_log(Rs[2][i] @ Rs[-2][i].T) / (4.0 * hq)
                w = (4.0 * w1 - w2) / 3.0
                Q[k] += float(wrenches[i][3:6] @ dp) + float(wrenches[i][0:3] @ w)
        return Q

    def forward_dynamics(self, q, qd, tau, wrenches=None):
        """Accelerations from M qdd = tau + Q_ext - damping - stiffness - h."""
        q = np.asarray(q, float)
        qd = np.asarray(qd, float)
        M = self.mass_matrix(q)
        rhs = np.asarray(tau, float) - self.damping * qd - self.bias_vector(q, qd)
        if wrenches is not None:
            rhs = rhs + self.external_generalized_force(q, wrenches)
        return np.linalg.solve(M, rhs)


def gae_direct(rewards, values, dones, bootstrap, gamma, lam):
    """O(T^2) direct-summation GAE for cross-checking the recursive form."""
    T = len(rewards)
    vals = np.concatenate([values, [bootstrap]])
    deltas = np.array([rewards[t] + gamma * vals[t + 1] * (1.0 - dones[t]) - vals[t]
                       for t in range(T)])
    adv = np.zeros(T)
    for t in range(T):
        acc = 0.0
        factor = 1.0
        for k in range(t, T):
            acc += factor * deltas[k]
            if dones[k]:
                break
            factor *= gamma * lam
        adv[t] = acc
    return adv, adv + values
