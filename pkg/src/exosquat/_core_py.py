"""Pure-numpy kinematics, dynamics and substep kernels.

Function-for-function twin of the compiled ``_core`` extension. It is
selected automatically when the extension cannot be imported, and serves as
the reference the compiled path is tested against.

Conventions shared with the extension:

* Spatial vectors are expressed in world coordinates at the world origin,
  angular part first: motion ``[w; v_O]``, force ``[n_O; f]``.
* ``q = [root position (3), root quaternion wxyz (4), joint coords]`` and
  ``v = [root linear velocity (3, world), root angular velocity (3, world),
  joint rates]``. Every non-root body owns exactly one 1-DoF joint, so body
  ``i >= 1`` maps to ``q[6 + i]`` and ``v[5 + i]``.
"""

import math

import numpy as np

FREE, REVOLUTE, PRISMATIC = 0, 1, 2

STATUS_OK = 0
STATUS_DIVERGED = 1


def skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def quat_to_rot(qw, qx, qy, qz):
    return np.array([
        [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy)],
        [2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx)],
        [2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy)],
    ])


def axis_rot(axis, angle):
    c, s = math.cos(angle), math.sin(angle)
    k = skew(axis)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def crm(v, m):
    w, vo = v[:3], v[3:]
    return np.concatenate([np.cross(w, m[:3]), np.cross(w, m[3:]) + np.cross(vo, m[:3])])


def crf(v, f):
    w, vo = v[:3], v[3:]
    return np.concatenate([np.cross(w, f[:3]) + np.cross(vo, f[3:]), np.cross(w, f[3:])])


class KernelModel:
    """Flat array view of an articulated tree, plus the substep kernels.

    All per-joint arrays are indexed by body; entry 0 (the floating root)
    is ignored.
    """

    backend = "python"

    def __init__(self, parent, jtype, joff, jaxis, mass, com, inertia,
                 armature, damping, stiffness, q_rest, q_lo, q_hi, limit_k, limit_d,
                 sensor_body, sensor_pos,
                 spring_a, spring_b, spring_pa, spring_pb, spring_k, spring_c, spring_l0,
                 act_body):
        self.parent = np.asarray(parent, dtype=np.int64)
        self.jtype = np.asarray(jtype, dtype=np.int64)
        self.joff = np.asarray(joff, dtype=float).reshape(-1, 3)
        self.jaxis = np.asarray(jaxis, dtype=float).reshape(-1, 3)
        self.mass = np.asarray(mass, dtype=float)
        self.com = np.asarray(com, dtype=float).reshape(-1, 3)
        self.inertia = np.asarray(inertia, dtype=float).reshape(-1, 3, 3)
        self.armature = np.asarray(armature, dtype=float)
        self.damping = np.asarray(damping, dtype=float)
        self.stiffness = np.asarray(stiffness, dtype=float)
        self.q_rest = np.asarray(q_rest, dtype=float)
        self.q_lo = np.asarray(q_lo, dtype=float)
        self.q_hi = np.asarray(q_hi, dtype=float)
        self.limit_k = float(limit_k)
        self.limit_d = float(limit_d)
        self.sensor_body = np.asarray(sensor_body, dtype=np.int64)
        self.sensor_pos = np.asarray(sensor_pos, dtype=float).reshape(-1, 3)
        self.spring_a = np.asarray(spring_a, dtype=np.int64)
        self.spring_b = np.asarray(spring_b, dtype=np.int64)
        self.spring_pa = np.asarray(spring_pa, dtype=float).reshape(-1, 3)
        self.spring_pb = np.asarray(spring_pb, dtype=float).reshape(-1, 3)
        self.spring_k = np.asarray(spring_k, dtype=float)
        self.spring_c = np.asarray(spring_c, dtype=float)
        self.spring_l0 = np.asarray(spring_l0, dtype=float)
        self.act_body = np.asarray(act_body, dtype=np.int64)
        self.nb = len(self.parent)
        self.nq = self.nb + 6
        self.nv = self.nb + 5
        self.ns = len(self.sensor_body)
        self.nsp = len(self.spring_a)
        self.nact = len(self.act_body)
        self.total_mass = float(self.mass.sum())

    # -- kinematics ---------------------------------------------------------

    def fk(self, q):
        """World rotation ``R[nb,3,3]`` and origin ``p[nb,3]`` of every body."""
        q = np.asarray(q, dtype=float)
        nb = self.nb
        R = np.empty((nb, 3, 3))
        p = np.empty((nb, 3))
        R[0] = quat_to_rot(q[3], q[4], q[5], q[6])
        p[0] = q[0:3]
        for i in range(1, nb):
            lam = self.parent[i]
            x = q[6 + i]
            if self.jtype[i] == REVOLUTE:
                R[i] = R[lam] @ axis_rot(self.jaxis[i], x)
                p[i] = p[lam] + R[lam] @ self.joff[i]
            else:
                R[i] = R[lam]
                p[i] = p[lam] + R[lam] @ (self.joff[i] + self.jaxis[i] * x)
        return R, p

    def _kinematics(self, q, v):
        R, p = self.fk(q)
        nb = self.nb
        S = np.zeros((nb, 6))
        V = np.empty((nb, 6))
        w0 = v[3:6]
        V[0, :3] = w0
        V[0, 3:] = v[0:3] + np.cross(p[0], w0)
        for i in range(1, nb):
            lam = self.parent[i]
            aw = R[lam] @ self.jaxis[i]
            if self.jtype[i] == REVOLUTE:
                S[i, :3] = aw
                S[i, 3:] = np.cross(p[i], aw)
            else:
                S[i, 3:] = aw
            V[i] = V[lam] + S[i] * v[5 + i]
        return R, p, S, V

    def _spatial_inertias(self, R, p):
        nb = self.nb
        out = np.empty((nb, 6, 6))
        cw = np.empty((nb, 3))
        for i in range(nb):
            m = self.mass[i]
            c = p[i] + R[i] @ self.com[i]
            cw[i] = c
            Iw = R[i] @ self.inertia[i] @ R[i].T
            cx = skew(c)
            out[i, :3, :3] = Iw + m * (cx @ cx.T)
            out[i, :3, 3:] = m * cx
            out[i, 3:, :3] = m * cx.T
            out[i, 3:, 3:] = m * np.eye(3)
        return out, cw

    @staticmethod
    def _root_S(p0):
        S0 = np.zeros((6, 6))
        S0[:3, 3:] = np.eye(3)
        S0[3:, :3] = np.eye(3)
        S0[3:, 3:] = skew(p0)
        return S0

    def body_velocities(self, q, v):
        """Spatial velocity ``[w; v_O]`` of every body, shape ``(nb, 6)``."""
        return self._kinematics(np.asarray(q, float), np.asarray(v, float))[3]

    def com_position(self, q):
        R, p = self.fk(q)
        c = p + np.einsum("bij,bj->bi", R, self.com)
        return (self.mass[:, None] * c).sum(axis=0) / self.total_mass

    def linear_momentum(self, q, v):
        R, p, _, V = self._kinematics(np.asarray(q, float), np.asarray(v, float))
        c = p + np.einsum("bij,bj->bi", R, self.com)
        vc = V[:, 3:] + np.cross(V[:, :3], c)
        return (self.mass[:, None] * vc).sum(axis=0)

    # -- dynamics -----------------------------------------------------------

    def _mass_matrix(self, R, p, S):
        nb, nv = self.nb, self.nv
        I, _ = self._spatial_inertias(R, p)
        Ic = I.copy()
        for i in range(nb - 1, 0, -1):
            Ic[self.parent[i]] += Ic[i]
        S0 = self._root_S(p[0])
        M = np.zeros((nv, nv))
        M[:6, :6] = S0.T @ Ic[0] @ S0
        for i in range(1, nb):
            F = Ic[i] @ S[i]
            vi = 5 + i
            M[vi, vi] = S[i] @ F + self.armature[i]
            j = self.parent[i]
            while j >= 1:
                M[vi, 5 + j] = M[5 + j, vi] = S[j] @ F
                j = self.parent[j]
            M[vi, :6] = S0.T @ F
            M[:6, vi] = M[vi, :6]
        return M

    def mass_matrix(self, q):
        q = np.asarray(q, float)
        R, p, S, _ = self._kinematics(q, np.zeros(self.nv))
        return self._mass_matrix(R, p, S)

    def _rnea(self, R, p, S, V, v, qdd, wrench, gravity):
        nb, nv = self.nb, self.nv
        I, _ = self._spatial_inertias(R, p)
        A = np.empty((nb, 6))
        S0 = self._root_S(p[0])
        A[0] = S0 @ qdd[:6]
        A[0, 3:] += np.cross(v[0:3], v[3:6]) - gravity
        for i in range(1, nb):
            lam = self.parent[i]
            A[i] = A[lam] + S[i] * qdd[5 + i] + crm(V[i], S[i] * v[5 + i])
        f = np.empty((nb, 6))
        for i in range(nb):
            f[i] = I[i] @ A[i] + crf(V[i], I[i] @ V[i]) - wrench[i]
        tau = np.zeros(nv)
        for i in range(nb - 1, 0, -1):
            tau[5 + i] = S[i] @ f[i] + self.armature[i] * qdd[5 + i]
            f[self.parent[i]] += f[i]
        tau[:6] = S0.T @ f[0]
        return tau

    def rnea(self, q, v, qdd, wrench, gravity):
        """Inverse dynamics: generalized force producing ``qdd``."""
        q = np.asarray(q, float)
        v = np.asarray(v, float)
        R, p, S, V = self._kinematics(q, v)
        return self._rnea(R, p, S, V, v, np.asarray(qdd, float),
                          np.asarray(wrench, float).reshape(self.nb, 6),
                          np.asarray(gravity, float))

    def _fd(self, R, p, S, V, v, tau, wrench, gravity, lock_root, D=None):
        nv = self.nv
        bias = self._rnea(R, p, S, V, v, np.zeros(nv), wrench, gravity)
        M = self._mass_matrix(R, p, S)
        if D is not None:
            M = M + D
        rhs = tau - bias
        qdd = np.zeros(nv)
        lo = 6 if lock_root else 0
        Msub = M[lo:, lo:]
        try:
            L = np.linalg.cholesky(Msub)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("mass matrix is not positive definite") from exc
        y = np.linalg.solve(L, rhs[lo:])
        qdd[lo:] = np.linalg.solve(L.T, y)
        return qdd

    def forward_dynamics(self, q, v, tau, wrench, gravity, lock_root=False):
        q = np.asarray(q, float)
        v = np.asarray(v, float)
        R, p, S, V = self._kinematics(q, v)
        return self._fd(R, p, S, V, v, np.asarray(tau, float),
                        np.asarray(wrench, float).reshape(self.nb, 6),
                        np.asarray(gravity, float), bool(lock_root))

    # -- forces -------------------------------------------------------------

    def _contact(self, R, p, V, mu, kn, dn, veps):
        ns = self.ns
        pos = np.empty((ns, 3))
        force = np.zeros((ns, 3))
        damp = np.zeros((ns, 2))
        for k in range(ns):
            b = self.sensor_body[k]
            x = p[b] + R[b] @ self.sensor_pos[k]
            pos[k] = x
            pen = -x[2]
            if pen <= 0.0:
                continue
            vel = V[b, 3:] + np.cross(V[b, :3], x)
            fn = kn * pen - dn * vel[2]
            if fn <= 0.0:
                continue
            vt = math.hypot(vel[0], vel[1])
            scale = mu * fn / math.sqrt(vt * vt + veps * veps)
            force[k] = (-scale * vel[0], -scale * vel[1], fn)
            damp[k] = (scale, dn)
        return pos, force, damp

    def contact(self, q, v, mu, kn, dn, veps):
        """Sensor-point world positions and ground reaction forces."""
        R, p, _, V = self._kinematics(np.asarray(q, float), np.asarray(v, float))
        return self._contact(R, p, V, mu, kn, dn, veps)[:2]

    def _springs(self, R, p, V):
        nsp = self.nsp
        force = np.zeros((nsp, 3))
        xa_all = np.empty((nsp, 3))
        xb_all = np.empty((nsp, 3))
        axis = np.zeros((nsp, 3))
        for k in range(nsp):
            a, b = self.spring_a[k], self.spring_b[k]
            xa = p[a] + R[a] @ self.spring_pa[k]
            xb = p[b] + R[b] @ self.spring_pb[k]
            xa_all[k], xb_all[k] = xa, xb
            va = V[a, 3:] + np.cross(V[a, :3], xa)
            vb = V[b, 3:] + np.cross(V[b, :3], xb)
            d = xb - xa
            dd = vb - va
            if self.spring_l0[k] == 0.0:
                # zero rest length: isotropic point weld
                force[k] = -self.spring_k[k] * d - self.spring_c[k] * dd
            else:
                length = math.sqrt(d @ d)
                if length < 1e-12:
                    continue
                u = d / length
                axis[k] = u
                mag = self.spring_k[k] * (length - self.spring_l0[k]) + self.spring_c[k] * (u @ dd)
                force[k] = -mag * u
        return xa_all, xb_all, force, axis

    def springs(self, q, v):
        """Spring endpoints and the force each spring applies to body ``b``.

        Body ``a`` receives the opposite force at its own endpoint.
        """
        R, p, _, V = self._kinematics(np.asarray(q, float), np.asarray(v, float))
        return self._springs(R, p, V)[:3]

    def _point_jacobian(self, p, S, b, x):
        """Map from ``v`` to the world velocity of point ``x`` fixed on body ``b``."""
        J = np.zeros((3, self.nv))
        J[:, 0:3] = np.eye(3)
        r = x - p[0]
        J[:, 3:6] = -skew(r)
        j = b
        while j >= 1:
            J[:, 5 + j] = S[j, 3:] + np.cross(S[j, :3], x)
            j = self.parent[j]
        return J

    def passive_torques(self, q, v):
        tau = np.zeros(self.nv)
        for i in range(1, self.nb):
            x, xd = q[6 + i], v[5 + i]
            t = -self.damping[i] * xd - self.stiffness[i] * (x - self.q_rest[i])
            if x > self.q_hi[i]:
                t -= self.limit_k * (x - self.q_hi[i]) + self.limit_d * xd
            elif x < self.q_lo[i]:
                t -= self.limit_k * (x - self.q_lo[i]) + self.limit_d * xd
            tau[5 + i] = t
        return tau

    # -- integration --------------------------------------------------------

    def _integrate(self, q, v, qdd, dt, lock_root):
        v += qdd * dt
        if lock_root:
            v[:6] = 0.0
        q[0:3] += v[0:3] * dt
        w = v[3:6]
        wn = math.sqrt(w @ w)
        if wn > 0.0:
            h = 0.5 * wn * dt
            s = math.sin(h) / wn
            dw, dx, dy, dz = math.cos(h), w[0] * s, w[1] * s, w[2] * s
            qw, qx, qy, qz = q[3], q[4], q[5], q[6]
            q[3] = dw * qw - dx * qx - dy * qy - dz * qz
            q[4] = dw * qx + dx * qw + dy * qz - dz * qy
            q[5] = dw * qy - dx * qz + dy * qw + dz * qx
            q[6] = dw * qz + dx * qy - dy * qx + dz * qw
        qn = math.sqrt(q[3:7] @ q[3:7])
        q[3:7] /= qn
        q[7:] += v[6:] * dt

    def _momentum(self, R, p, V):
        c = p + np.einsum("bij,bj->bi", R, self.com)
        vc = V[:, 3:] + np.cross(V[:, :3], c)
        return (self.mass[:, None] * vc).sum(axis=0)

    def step(self, q, v, tau, wrench, gravity, dt, lock_root=False):
        """One semi-implicit Euler step in place; returns a status code."""
        gravity = np.asarray(gravity, float)
        wrench = np.asarray(wrench, float).reshape(self.nb, 6)
        R, p, S, V = self._kinematics(q, v)
        p_target = None
        if not lock_root:
            p_target = self._momentum(R, p, V) + dt * (wrench[:, 3:].sum(axis=0) + self.total_mass * gravity)
        qdd = self._fd(R, p, S, V, v, np.asarray(tau, float), wrench, gravity, lock_root)
        self._integrate(q, v, qdd, dt, lock_root)
        if p_target is not None:
            R, p, S, V = self._kinematics(q, v)
            v[0:3] += (p_target - self._momentum(R, p, V)) / self.total_mass
        return STATUS_OK if np.all(np.isfinite(q)) and np.all(np.isfinite(v)) else STATUS_DIVERGED

    def simulate(self, q, v, target0, target1, kp, kv, tau_max, strength,
                 pert_body, pert_point, pert_f0, pert_f1,
                 gravity, mu, kn, dn, veps, dt, nsub, lock_root,
                 q_bound, v_bound, out_tau, out_peak):
        """Run ``nsub`` physics substeps of one control tick, in place.

        The PD target ramps linearly from ``target0`` to ``target1``
        (substep ``k`` uses ``alpha = (k + 1) / nsub``); perturbation forces
        ramp from ``pert_f0`` to ``pert_f1`` the same way. ``out_tau``
        receives the actuated torques of the last substep and ``out_peak``
        the per-joint peak magnitude over the tick.

        Contact damping, regularized friction and spring damping are
        integrated linearly-implicitly: their velocity gains enter the mass
        matrix as ``dt * J^T C J``, which keeps the light feet stable at the
        900 Hz step with the stiff default contact.
        """
        gravity = np.asarray(gravity, float)
        target0 = np.asarray(target0, float)
        target1 = np.asarray(target1, float)
        strength = np.asarray(strength, float)
        pert_body = np.asarray(pert_body, np.int64)
        pert_point = np.asarray(pert_point, float).reshape(-1, 3)
        pert_f0 = np.asarray(pert_f0, float).reshape(-1, 3)
        pert_f1 = np.asarray(pert_f1, float).reshape(-1, 3)
        out_peak[:] = 0.0
        nb = self.nb
        R, p, S, V = self._kinematics(q, v)
        for k in range(nsub):
            alpha = (k + 1) / nsub
            target = (1.0 - alpha) * target0 + alpha * target1
            tau = self.passive_torques(q, v)
            for j in range(self.nact):
                b = self.act_body[j]
                raw = strength[j] * (kp * (target[j] - q[6 + b]) - kv * v[5 + b])
                t = min(max(raw, -tau_max), tau_max)
                tau[5 + b] += t
                out_tau[j] = t
                if abs(t) > out_peak[j]:
                    out_peak[j] = abs(t)
            wrench = np.zeros((nb, 6))
            D = np.zeros((self.nv, self.nv))
            contact_rows = []
            pos, force, damp = self._contact(R, p, V, mu, kn, dn, veps)
            for s in range(self.ns):
                b = self.sensor_body[s]
                wrench[b, :3] += np.cross(pos[s], force[s])
                wrench[b, 3:] += force[s]
                if damp[s, 1] > 0.0:
                    J = self._point_jacobian(p, S, b, pos[s])
                    C = np.diag([damp[s, 0], damp[s, 0], damp[s, 1]])
                    D += dt * (J.T @ C @ J)
                    contact_rows.append((J, C))
            xa, xb, fs, axis = self._springs(R, p, V)
            for s in range(self.nsp):
                a, b = self.spring_a[s], self.spring_b[s]
                wrench[b, :3] += np.cross(xb[s], fs[s])
                wrench[b, 3:] += fs[s]
                wrench[a, :3] -= np.cross(xa[s], fs[s])
                wrench[a, 3:] -= fs[s]
                Jr = self._point_jacobian(p, S, b, xb[s]) - self._point_jacobian(p, S, a, xa[s])
                if self.spring_l0[s] == 0.0:
                    C = self.spring_c[s] * np.eye(3)
                else:
                    C = self.spring_c[s] * np.outer(axis[s], axis[s])
                D += dt * (Jr.T @ C @ Jr)
            for s in range(len(pert_body)):
                b = pert_body[s]
                x = p[b] + R[b] @ pert_point[s]
                f = (1.0 - alpha) * pert_f0[s] + alpha * pert_f1[s]
                wrench[b, :3] += np.cross(x, f)
                wrench[b, 3:] += f
            p_target = None
            if not lock_root:
                p_target = self._momentum(R, p, V) + dt * (wrench[:, 3:].sum(axis=0) + self.total_mass * gravity)
            qdd = self._fd(R, p, S, V, v, tau, wrench, gravity, lock_root, D)
            if p_target is not None:
                for J, C in contact_rows:
                    p_target -= dt * dt * (C @ (J @ qdd))
            self._integrate(q, v, qdd, dt, lock_root)
            R, p, S, V = self._kinematics(q, v)
            if p_target is not None:
                dv = (p_target - self._momentum(R, p, V)) / self.total_mass
                v[0:3] += dv
                V[:, 3:] += dv
            if not (np.all(np.abs(q) < q_bound) and np.all(np.abs(v) < v_bound)):
                return STATUS_DIVERGED
        return STATUS_OK
