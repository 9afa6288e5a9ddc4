# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kinematics, dynamics and substep kernels.

Same API and conventions as :mod:`exosquat._core_py`; see that module for the
coordinate layout. Fixed-capacity C buffers bound the model size.
"""

import numpy as np

from libc.math cimport sqrt, sin, cos, fabs, isfinite
from libc.string cimport memset, memcpy

cdef enum:
    MAXB = 32
    MAXV = 37
    MAXS = 64
    MAXP = 16

cdef enum:
    REVOLUTE = 1
    PRISMATIC = 2


cdef inline void cross3(const double* a, const double* b, double* out) noexcept nogil:
    cdef double x = a[1] * b[2] - a[2] * b[1]
    cdef double y = a[2] * b[0] - a[0] * b[2]
    cdef double z = a[0] * b[1] - a[1] * b[0]
    out[0] = x
    out[1] = y
    out[2] = z


cdef inline void matvec3(const double* R, const double* x, double* out) noexcept nogil:
    cdef double a = R[0] * x[0] + R[1] * x[1] + R[2] * x[2]
    cdef double b = R[3] * x[0] + R[4] * x[1] + R[5] * x[2]
    cdef double c = R[6] * x[0] + R[7] * x[1] + R[8] * x[2]
    out[0] = a
    out[1] = b
    out[2] = c


cdef inline void matmul3(const double* A, const double* B, double* out) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = A[3 * i] * B[j] + A[3 * i + 1] * B[3 + j] + A[3 * i + 2] * B[6 + j]


cdef inline void axis_rot(const double* k, double angle, double* out) noexcept nogil:
    cdef double c = cos(angle), s = sin(angle), t = 1.0 - c
    cdef double x = k[0], y = k[1], z = k[2]
    out[0] = c + t * x * x
    out[1] = t * x * y - s * z
    out[2] = t * x * z + s * y
    out[3] = t * x * y + s * z
    out[4] = c + t * y * y
    out[5] = t * y * z - s * x
    out[6] = t * x * z - s * y
    out[7] = t * y * z + s * x
    out[8] = c + t * z * z


cdef inline void matvec6(const double* A, const double* x, double* out) noexcept nogil:
    cdef int i
    for i in range(6):
        out[i] = (A[6 * i] * x[0] + A[6 * i + 1] * x[1] + A[6 * i + 2] * x[2]
                  + A[6 * i + 3] * x[3] + A[6 * i + 4] * x[4] + A[6 * i + 5] * x[5])


cdef inline double dot6(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3] + a[4] * b[4] + a[5] * b[5]


cdef inline void crm(const double* v, const double* m, double* out) noexcept nogil:
    # [w x m_w ; w x m_v + v_O x m_w]
    cdef double t[3]
    cross3(v, m, out)
    cross3(v, m + 3, out + 3)
    cross3(v + 3, m, t)
    out[3] += t[0]
    out[4] += t[1]
    out[5] += t[2]


cdef inline void crf(const double* v, const double* f, double* out) noexcept nogil:
    # [w x n + v_O x f ; w x f]
    cdef double t[3]
    cross3(v, f, out)
    cross3(v + 3, f + 3, t)
    out[0] += t[0]
    out[1] += t[1]
    out[2] += t[2]
    cross3(v, f + 3, out + 3)


cdef class KernelModel:
    cdef readonly int nb, nq, nv, ns, nsp, nact
    cdef readonly double total_mass, limit_k, limit_d
    cdef readonly object mass, com, backend
    cdef int parent[MAXB]
    cdef int jtype[MAXB]
    cdef double joff[MAXB][3]
    cdef double jaxis[MAXB][3]
    cdef double m[MAXB]
    cdef double c_loc[MAXB][3]
    cdef double I_loc[MAXB][9]
    cdef double armature[MAXB]
    cdef double damping[MAXB]
    cdef double stiffness[MAXB]
    cdef double q_rest[MAXB]
    cdef double q_lo[MAXB]
    cdef double q_hi[MAXB]
    cdef int sensor_body[MAXS]
    cdef double sensor_pos[MAXS][3]
    cdef int spring_a[MAXS]
    cdef int spring_b[MAXS]
    cdef double spring_pa[MAXS][3]
    cdef double spring_pb[MAXS][3]
    cdef double spring_k[MAXS]
    cdef double spring_c[MAXS]
    cdef double spring_l0[MAXS]
    cdef int act_body[MAXB]
    # work buffers
    cdef double R[MAXB][9]
    cdef double p[MAXB][3]
    cdef double S[MAXB][6]
    cdef double V[MAXB][6]
    cdef double I6[MAXB][36]
    cdef double Ic[MAXB][36]
    cdef double cw[MAXB][3]
    cdef double A[MAXB][6]
    cdef double F[MAXB][6]
    cdef double M[MAXV * MAXV]
    cdef double L[MAXV * MAXV]
    cdef double wrench[MAXB][6]
    cdef double tau[MAXV]
    cdef double bias[MAXV]
    cdef double qdd[MAXV]
    cdef double spos[MAXS][3]
    cdef double sforce[MAXS][3]
    cdef double xa[MAXS][3]
    cdef double xb[MAXS][3]
    cdef double fsp[MAXS][3]
    cdef double cdamp[MAXS][2]
    cdef double saxis[MAXS][3]
    cdef double Jc[MAXS][3 * MAXV]
    cdef double Jw[2][3 * MAXV]

    def __init__(self, parent, jtype, joff, jaxis, mass, com, inertia,
                 armature, damping, stiffness, q_rest, q_lo, q_hi, limit_k, limit_d,
                 sensor_body, sensor_pos,
                 spring_a, spring_b, spring_pa, spring_pb, spring_k, spring_c, spring_l0,
                 act_body):
        cdef int i, j
        parent = np.asarray(parent, dtype=np.int64).reshape(-1)
        nb = len(parent)
        if nb > MAXB or len(sensor_body) > MAXS or len(spring_a) > MAXS:
            raise ValueError("model exceeds compiled kernel capacity")
        self.backend = "compiled"
        self.nb = nb
        self.nq = nb + 6
        self.nv = nb + 5
        self.ns = len(sensor_body)
        self.nsp = len(spring_a)
        self.nact = len(act_body)
        self.limit_k = float(limit_k)
        self.limit_d = float(limit_d)
        joff = np.asarray(joff, float).reshape(-1, 3)
        jaxis = np.asarray(jaxis, float).reshape(-1, 3)
        com = np.asarray(com, float).reshape(-1, 3)
        inertia = np.asarray(inertia, float).reshape(-1, 9)
        sensor_pos = np.asarray(sensor_pos, float).reshape(-1, 3)
        spring_pa = np.asarray(spring_pa, float).reshape(-1, 3)
        spring_pb = np.asarray(spring_pb, float).reshape(-1, 3)
        self.mass = np.array(mass, dtype=float)
        self.com = com.copy()
        self.total_mass = float(self.mass.sum())
        for i in range(nb):
            self.parent[i] = parent[i]
            self.jtype[i] = jtype[i]
            self.m[i] = mass[i]
            self.armature[i] = armature[i]
            self.damping[i] = damping[i]
            self.stiffness[i] = stiffness[i]
            self.q_rest[i] = q_rest[i]
            self.q_lo[i] = q_lo[i]
            self.q_hi[i] = q_hi[i]
            for j in range(3):
                self.joff[i][j] = joff[i, j]
                self.jaxis[i][j] = jaxis[i, j]
                self.c_loc[i][j] = com[i, j]
            for j in range(9):
                self.I_loc[i][j] = inertia[i, j]
        for i in range(self.ns):
            self.sensor_body[i] = sensor_body[i]
            for j in range(3):
                self.sensor_pos[i][j] = sensor_pos[i, j]
        for i in range(self.nsp):
            self.spring_a[i] = spring_a[i]
            self.spring_b[i] = spring_b[i]
            self.spring_k[i] = spring_k[i]
            self.spring_c[i] = spring_c[i]
            self.spring_l0[i] = spring_l0[i]
            for j in range(3):
                self.spring_pa[i][j] = spring_pa[i, j]
                self.spring_pb[i][j] = spring_pb[i, j]
        for i in range(self.nact):
            self.act_body[i] = act_body[i]

    # -- internal kernels -----------------------------------------------------

    cdef void _fk(self, const double* q) noexcept nogil:
        cdef int i, lam
        cdef double qw = q[3], qx = q[4], qy = q[5], qz = q[6]
        cdef double Rj[9]
        cdef double t[3]
        cdef double* R0 = self.R[0]
        R0[0] = 1 - 2 * (qy * qy + qz * qz)
        R0[1] = 2 * (qx * qy - qw * qz)
        R0[2] = 2 * (qx * qz + qw * qy)
        R0[3] = 2 * (qx * qy + qw * qz)
        R0[4] = 1 - 2 * (qx * qx + qz * qz)
        R0[5] = 2 * (qy * qz - qw * qx)
        R0[6] = 2 * (qx * qz - qw * qy)
        R0[7] = 2 * (qy * qz + qw * qx)
        R0[8] = 1 - 2 * (qx * qx + qy * qy)
        self.p[0][0] = q[0]
        self.p[0][1] = q[1]
        self.p[0][2] = q[2]
        for i in range(1, self.nb):
            lam = self.parent[i]
            if self.jtype[i] == REVOLUTE:
                axis_rot(self.jaxis[i], q[6 + i], Rj)
                matmul3(self.R[lam], Rj, self.R[i])
                matvec3(self.R[lam], self.joff[i], t)
            else:
                memcpy(self.R[i], self.R[lam], 9 * sizeof(double))
                t[0] = self.joff[i][0] + self.jaxis[i][0] * q[6 + i]
                t[1] = self.joff[i][1] + self.jaxis[i][1] * q[6 + i]
                t[2] = self.joff[i][2] + self.jaxis[i][2] * q[6 + i]
                matvec3(self.R[lam], t, t)
            self.p[i][0] = self.p[lam][0] + t[0]
            self.p[i][1] = self.p[lam][1] + t[1]
            self.p[i][2] = self.p[lam][2] + t[2]

    cdef void _kin(self, const double* q, const double* v) noexcept nogil:
        cdef int i, lam, k
        cdef double aw[3]
        self._fk(q)
        self.V[0][0] = v[3]
        self.V[0][1] = v[4]
        self.V[0][2] = v[5]
        cross3(self.p[0], v + 3, self.V[0] + 3)
        self.V[0][3] += v[0]
        self.V[0][4] += v[1]
        self.V[0][5] += v[2]
        for i in range(1, self.nb):
            lam = self.parent[i]
            matvec3(self.R[lam], self.jaxis[i], aw)
            if self.jtype[i] == REVOLUTE:
                self.S[i][0] = aw[0]
                self.S[i][1] = aw[1]
                self.S[i][2] = aw[2]
                cross3(self.p[i], aw, self.S[i] + 3)
            else:
                self.S[i][0] = 0.0
                self.S[i][1] = 0.0
                self.S[i][2] = 0.0
                self.S[i][3] = aw[0]
                self.S[i][4] = aw[1]
                self.S[i][5] = aw[2]
            for k in range(6):
                self.V[i][k] = self.V[lam][k] + self.S[i][k] * v[5 + i]

    cdef void _inertias(self) noexcept nogil:
        cdef int i, a, b
        cdef double mi, cx, cy, cz
        cdef double RI[9]
        cdef double Iw[9]
        cdef double* Rm
        cdef double* X
        cdef double cs[9]
        cdef double ccT[9]
        for i in range(self.nb):
            mi = self.m[i]
            Rm = self.R[i]
            matvec3(Rm, self.c_loc[i], self.cw[i])
            self.cw[i][0] += self.p[i][0]
            self.cw[i][1] += self.p[i][1]
            self.cw[i][2] += self.p[i][2]
            cx = self.cw[i][0]
            cy = self.cw[i][1]
            cz = self.cw[i][2]
            matmul3(Rm, self.I_loc[i], RI)
            # Iw = RI * R^T
            for a in range(3):
                for b in range(3):
                    Iw[3 * a + b] = RI[3 * a] * Rm[3 * b] + RI[3 * a + 1] * Rm[3 * b + 1] + RI[3 * a + 2] * Rm[3 * b + 2]
            cs[0] = 0.0
            cs[1] = -cz
            cs[2] = cy
            cs[3] = cz
            cs[4] = 0.0
            cs[5] = -cx
            cs[6] = -cy
            cs[7] = cx
            cs[8] = 0.0
            # [c][c]^T
            for a in range(3):
                for b in range(3):
                    ccT[3 * a + b] = cs[3 * a] * cs[3 * b] + cs[3 * a + 1] * cs[3 * b + 1] + cs[3 * a + 2] * cs[3 * b + 2]
            X = self.I6[i]
            for a in range(3):
                for b in range(3):
                    X[6 * a + b] = Iw[3 * a + b] + mi * ccT[3 * a + b]
                    X[6 * a + 3 + b] = mi * cs[3 * a + b]
                    X[6 * (3 + a) + b] = mi * cs[3 * b + a]
                    X[6 * (3 + a) + 3 + b] = mi if a == b else 0.0

    cdef void _rnea(self, const double* v, const double* qdd, const double* g, double* out) noexcept nogil:
        """Inverse dynamics with the current kinematics and ``self.wrench``."""
        cdef int i, lam, k, nb = self.nb
        cdef double t[6]
        cdef double u[6]
        cdef double w[3]
        cdef double hv[6]
        # root: S0 qdd0 + [0; v x w - g]
        self.A[0][0] = qdd[3]
        self.A[0][1] = qdd[4]
        self.A[0][2] = qdd[5]
        cross3(self.p[0], qdd + 3, self.A[0] + 3)
        cross3(v, v + 3, w)
        for k in range(3):
            self.A[0][3 + k] += qdd[k] + w[k] - g[k]
        for i in range(1, nb):
            lam = self.parent[i]
            for k in range(6):
                u[k] = self.S[i][k] * v[5 + i]
            crm(self.V[i], u, t)
            for k in range(6):
                self.A[i][k] = self.A[lam][k] + self.S[i][k] * qdd[5 + i] + t[k]
        for i in range(nb):
            matvec6(self.I6[i], self.A[i], self.F[i])
            matvec6(self.I6[i], self.V[i], hv)
            crf(self.V[i], hv, t)
            for k in range(6):
                self.F[i][k] += t[k] - self.wrench[i][k]
        for i in range(nb - 1, 0, -1):
            out[5 + i] = dot6(self.S[i], self.F[i]) + self.armature[i] * qdd[5 + i]
            lam = self.parent[i]
            for k in range(6):
                self.F[lam][k] += self.F[i][k]
        out[0] = self.F[0][3]
        out[1] = self.F[0][4]
        out[2] = self.F[0][5]
        cross3(self.p[0], self.F[0] + 3, w)
        out[3] = self.F[0][0] - w[0]
        out[4] = self.F[0][1] - w[1]
        out[5] = self.F[0][2] - w[2]

    cdef void _crba(self) noexcept nogil:
        cdef int i, j, k, r, c, nb = self.nb, nv = self.nv
        cdef double Fv[6]
        cdef double col[6]
        cdef double S0[6][6]
        cdef double w[3]
        memcpy(self.Ic, self.I6, nb * 36 * sizeof(double))
        for i in range(nb - 1, 0, -1):
            j = self.parent[i]
            for k in range(36):
                self.Ic[j][k] += self.Ic[i][k]
        memset(self.M, 0, nv * nv * sizeof(double))
        # root columns of S0: linear velocity cols then angular cols
        memset(S0, 0, 36 * sizeof(double))
        for c in range(3):
            S0[c][3 + c] = 1.0  # d(v_O)/d(v_root)
            S0[3 + c][c] = 1.0  # d(w)/d(w)
        # p x e_c in the linear rows of angular columns
        S0[3 + 0][3 + 1] = -self.p[0][2]
        S0[3 + 0][3 + 2] = self.p[0][1]
        S0[3 + 1][3 + 0] = self.p[0][2]
        S0[3 + 1][3 + 2] = -self.p[0][0]
        S0[3 + 2][3 + 0] = -self.p[0][1]
        S0[3 + 2][3 + 1] = self.p[0][0]
        for c in range(6):
            for k in range(6):
                col[k] = S0[k][c]
            matvec6(self.Ic[0], col, Fv)
            for r in range(6):
                for k in range(6):
                    self.M[r * nv + c] += S0[k][r] * Fv[k]
        for i in range(1, nb):
            matvec6(self.Ic[i], self.S[i], Fv)
            r = 5 + i
            self.M[r * nv + r] = dot6(self.S[i], Fv) + self.armature[i]
            j = self.parent[i]
            while j >= 1:
                c = 5 + j
                self.M[r * nv + c] = dot6(self.S[j], Fv)
                self.M[c * nv + r] = self.M[r * nv + c]
                j = self.parent[j]
            cross3(self.p[0], Fv + 3, w)
            for k in range(3):
                self.M[r * nv + k] = Fv[3 + k]
                self.M[r * nv + 3 + k] = Fv[k] - w[k]
            for k in range(6):
                self.M[k * nv + r] = self.M[r * nv + k]

    cdef int _solve(self, const double* rhs, double* out, int lo) noexcept nogil:
        """Cholesky solve of ``M[lo:, lo:] x = rhs[lo:]``; entries below ``lo`` are zeroed."""
        cdef int i, j, k, nv = self.nv, n = nv - lo
        cdef double s
        cdef double* L = self.L
        for i in range(n):
            for j in range(i + 1):
                s = self.M[(lo + i) * nv + lo + j]
                for k in range(j):
                    s -= L[i * nv + k] * L[j * nv + k]
                if i == j:
                    if not s > 0.0:
                        return -1
                    L[i * nv + i] = sqrt(s)
                else:
                    L[i * nv + j] = s / L[j * nv + j]
        for i in range(lo):
            out[i] = 0.0
        for i in range(n):
            s = rhs[lo + i]
            for k in range(i):
                s -= L[i * nv + k] * out[lo + k]
            out[lo + i] = s / L[i * nv + i]
        for i in range(n - 1, -1, -1):
            s = out[lo + i]
            for k in range(i + 1, n):
                s -= L[k * nv + i] * out[lo + k]
            out[lo + i] = s / L[i * nv + i]
        return 0

    cdef int _fd(self, const double* v, const double* tau, const double* g, int lock_root, double* out) noexcept nogil:
        cdef int i
        memset(self.qdd, 0, self.nv * sizeof(double))
        self._inertias()
        self._rnea(v, self.qdd, g, self.bias)
        self._crba()
        for i in range(self.nv):
            self.bias[i] = tau[i] - self.bias[i]
        return self._solve(self.bias, out, 6 if lock_root else 0)

    cdef void _contact(self, double mu, double kn, double dn, double veps) noexcept nogil:
        cdef int k, b
        cdef double pen, fn, vt, scale
        cdef double vel[3]
        cdef double t[3]
        for k in range(self.ns):
            b = self.sensor_body[k]
            matvec3(self.R[b], self.sensor_pos[k], t)
            self.spos[k][0] = self.p[b][0] + t[0]
            self.spos[k][1] = self.p[b][1] + t[1]
            self.spos[k][2] = self.p[b][2] + t[2]
            self.sforce[k][0] = 0.0
            self.sforce[k][1] = 0.0
            self.sforce[k][2] = 0.0
            self.cdamp[k][0] = 0.0
            self.cdamp[k][1] = 0.0
            pen = -self.spos[k][2]
            if pen <= 0.0:
                continue
            cross3(self.V[b], self.spos[k], vel)
            vel[0] += self.V[b][3]
            vel[1] += self.V[b][4]
            vel[2] += self.V[b][5]
            fn = kn * pen - dn * vel[2]
            if fn <= 0.0:
                continue
            vt = sqrt(vel[0] * vel[0] + vel[1] * vel[1])
            scale = mu * fn / sqrt(vt * vt + veps * veps)
            self.sforce[k][0] = -scale * vel[0]
            self.sforce[k][1] = -scale * vel[1]
            self.sforce[k][2] = fn
            self.cdamp[k][0] = scale
            self.cdamp[k][1] = dn

    cdef void _springs(self) noexcept nogil:
        cdef int k, a, b, j
        cdef double t[3]
        cdef double va[3]
        cdef double vb[3]
        cdef double d[3]
        cdef double dd[3]
        cdef double length, mag
        for k in range(self.nsp):
            a = self.spring_a[k]
            b = self.spring_b[k]
            matvec3(self.R[a], self.spring_pa[k], t)
            for j in range(3):
                self.xa[k][j] = self.p[a][j] + t[j]
            matvec3(self.R[b], self.spring_pb[k], t)
            for j in range(3):
                self.xb[k][j] = self.p[b][j] + t[j]
            cross3(self.V[a], self.xa[k], va)
            cross3(self.V[b], self.xb[k], vb)
            for j in range(3):
                va[j] += self.V[a][3 + j]
                vb[j] += self.V[b][3 + j]
                d[j] = self.xb[k][j] - self.xa[k][j]
                dd[j] = vb[j] - va[j]
            if self.spring_l0[k] == 0.0:
                for j in range(3):
                    self.fsp[k][j] = -self.spring_k[k] * d[j] - self.spring_c[k] * dd[j]
            else:
                length = sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
                if length < 1e-12:
                    self.fsp[k][0] = 0.0
                    self.fsp[k][1] = 0.0
                    self.fsp[k][2] = 0.0
                    continue
                for j in range(3):
                    d[j] /= length
                    self.saxis[k][j] = d[j]
                mag = (self.spring_k[k] * (length - self.spring_l0[k])
                       + self.spring_c[k] * (d[0] * dd[0] + d[1] * dd[1] + d[2] * dd[2]))
                for j in range(3):
                    self.fsp[k][j] = -mag * d[j]

    cdef void _point_jac(self, int b, const double* x, double* J) noexcept nogil:
        """3 x nv map from ``v`` to the world velocity of point ``x`` on body ``b``."""
        cdef int nv = self.nv, j, r
        cdef double rr[3]
        cdef double t[3]
        memset(J, 0, 3 * nv * sizeof(double))
        J[0] = 1.0
        J[nv + 1] = 1.0
        J[2 * nv + 2] = 1.0
        rr[0] = x[0] - self.p[0][0]
        rr[1] = x[1] - self.p[0][1]
        rr[2] = x[2] - self.p[0][2]
        J[4] = rr[2]
        J[5] = -rr[1]
        J[nv + 3] = -rr[2]
        J[nv + 5] = rr[0]
        J[2 * nv + 3] = rr[1]
        J[2 * nv + 4] = -rr[0]
        j = b
        while j >= 1:
            cross3(self.S[j], x, t)
            for r in range(3):
                J[r * nv + 5 + j] = self.S[j][3 + r] + t[r]
            j = self.parent[j]

    cdef void _add_jcj(self, const double* J, const double* C, double scale) noexcept nogil:
        """``M += scale * J^T C J`` for a 3 x nv ``J`` and 3 x 3 ``C``."""
        cdef int nv = self.nv, a, b, r, c
        cdef double CJ[3 * MAXV]
        cdef double s, ja
        for r in range(3):
            for b in range(nv):
                s = 0.0
                for c in range(3):
                    s += C[3 * r + c] * J[c * nv + b]
                CJ[r * nv + b] = s
        for a in range(nv):
            for r in range(3):
                ja = J[r * nv + a]
                if ja == 0.0:
                    continue
                ja *= scale
                for b in range(nv):
                    self.M[a * nv + b] += ja * CJ[r * nv + b]

    cdef void _implicit_damping(self, double dt) noexcept nogil:
        cdef int k, j, r, nv = self.nv
        cdef double C[9]
        for k in range(self.ns):
            if self.cdamp[k][1] > 0.0:
                self._point_jac(self.sensor_body[k], self.spos[k], self.Jc[k])
                memset(C, 0, 9 * sizeof(double))
                C[0] = self.cdamp[k][0]
                C[4] = self.cdamp[k][0]
                C[8] = self.cdamp[k][1]
                self._add_jcj(self.Jc[k], C, dt)
        for k in range(self.nsp):
            self._point_jac(self.spring_b[k], self.xb[k], self.Jw[0])
            self._point_jac(self.spring_a[k], self.xa[k], self.Jw[1])
            for j in range(3 * nv):
                self.Jw[0][j] -= self.Jw[1][j]
            for r in range(3):
                for j in range(3):
                    if self.spring_l0[k] == 0.0:
                        C[3 * r + j] = self.spring_c[k] if r == j else 0.0
                    else:
                        C[3 * r + j] = self.spring_c[k] * self.saxis[k][r] * self.saxis[k][j]
            self._add_jcj(self.Jw[0], C, dt)

    cdef void _passive(self, const double* q, const double* v, double* out) noexcept nogil:
        cdef int i
        cdef double x, xd, t
        for i in range(6):
            out[i] = 0.0
        for i in range(1, self.nb):
            x = q[6 + i]
            xd = v[5 + i]
            t = -self.damping[i] * xd - self.stiffness[i] * (x - self.q_rest[i])
            if x > self.q_hi[i]:
                t -= self.limit_k * (x - self.q_hi[i]) + self.limit_d * xd
            elif x < self.q_lo[i]:
                t -= self.limit_k * (x - self.q_lo[i]) + self.limit_d * xd
            out[5 + i] = t

    cdef void _add_point_force(self, int b, const double* x, const double* f, double sign) noexcept nogil:
        cdef double n[3]
        cross3(x, f, n)
        self.wrench[b][0] += sign * n[0]
        self.wrench[b][1] += sign * n[1]
        self.wrench[b][2] += sign * n[2]
        self.wrench[b][3] += sign * f[0]
        self.wrench[b][4] += sign * f[1]
        self.wrench[b][5] += sign * f[2]

    cdef void _momentum(self, double* out) noexcept nogil:
        cdef int i
        cdef double t[3]
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        for i in range(self.nb):
            # uses the CoM positions from _inertias
            cross3(self.V[i], self.cw[i], t)
            out[0] += self.m[i] * (self.V[i][3] + t[0])
            out[1] += self.m[i] * (self.V[i][4] + t[1])
            out[2] += self.m[i] * (self.V[i][5] + t[2])

    cdef void _com_world(self) noexcept nogil:
        cdef int i
        cdef double t[3]
        for i in range(self.nb):
            matvec3(self.R[i], self.c_loc[i], t)
            self.cw[i][0] = self.p[i][0] + t[0]
            self.cw[i][1] = self.p[i][1] + t[1]
            self.cw[i][2] = self.p[i][2] + t[2]

    cdef void _integrate(self, double* q, double* v, const double* qdd, double dt, int lock_root) noexcept nogil:
        cdef int i
        cdef double wn, h, s, dw, dx, dy, dz, qw, qx, qy, qz, qn
        for i in range(self.nv):
            v[i] += qdd[i] * dt
        if lock_root:
            for i in range(6):
                v[i] = 0.0
        q[0] += v[0] * dt
        q[1] += v[1] * dt
        q[2] += v[2] * dt
        wn = sqrt(v[3] * v[3] + v[4] * v[4] + v[5] * v[5])
        if wn > 0.0:
            h = 0.5 * wn * dt
            s = sin(h) / wn
            dw = cos(h)
            dx = v[3] * s
            dy = v[4] * s
            dz = v[5] * s
            qw = q[3]
            qx = q[4]
            qy = q[5]
            qz = q[6]
            q[3] = dw * qw - dx * qx - dy * qy - dz * qz
            q[4] = dw * qx + dx * qw + dy * qz - dz * qy
            q[5] = dw * qy - dx * qz + dy * qw + dz * qx
            q[6] = dw * qz + dx * qy - dy * qx + dz * qw
        qn = sqrt(q[3] * q[3] + q[4] * q[4] + q[5] * q[5] + q[6] * q[6])
        q[3] /= qn
        q[4] /= qn
        q[5] /= qn
        q[6] /= qn
        for i in range(7, self.nq):
            q[i] += v[i - 1] * dt

    cdef int _advance(self, double* q, double* v, const double* g, double dt, int lock_root,
                      int implicit) noexcept nogil:
        """Shared tail of one substep: ``self.tau`` and ``self.wrench`` are set."""
        cdef int i, k, r, nv = self.nv
        cdef double jq[3]
        cdef double ptarget[3]
        cdef double pnow[3]
        cdef double dv[3]
        cdef double fsum[3]
        cdef int status
        self._inertias()
        if not lock_root:
            self._momentum(ptarget)
            fsum[0] = 0.0
            fsum[1] = 0.0
            fsum[2] = 0.0
            for i in range(self.nb):
                fsum[0] += self.wrench[i][3]
                fsum[1] += self.wrench[i][4]
                fsum[2] += self.wrench[i][5]
            for k in range(3):
                ptarget[k] += dt * (fsum[k] + self.total_mass * g[k])
        memset(self.qdd, 0, self.nv * sizeof(double))
        self._rnea(v, self.qdd, g, self.bias)
        self._crba()
        if implicit:
            self._implicit_damping(dt)
        for i in range(self.nv):
            self.bias[i] = self.tau[i] - self.bias[i]
        status = self._solve(self.bias, self.qdd, 6 if lock_root else 0)
        if status != 0:
            return -1
        if implicit and not lock_root:
            for k in range(self.ns):
                if self.cdamp[k][1] > 0.0:
                    for r in range(3):
                        jq[r] = 0.0
                        for i in range(nv):
                            jq[r] += self.Jc[k][r * nv + i] * self.qdd[i]
                    ptarget[0] -= dt * dt * self.cdamp[k][0] * jq[0]
                    ptarget[1] -= dt * dt * self.cdamp[k][0] * jq[1]
                    ptarget[2] -= dt * dt * self.cdamp[k][1] * jq[2]
        self._integrate(q, v, self.qdd, dt, lock_root)
        self._kin(q, v)
        if not lock_root:
            self._com_world()
            self._momentum(pnow)
            for k in range(3):
                dv[k] = (ptarget[k] - pnow[k]) / self.total_mass
                v[k] += dv[k]
            for i in range(self.nb):
                self.V[i][3] += dv[0]
                self.V[i][4] += dv[1]
                self.V[i][5] += dv[2]
        return 0

    cdef void _load_wrench(self, const double[:, ::1] w) noexcept nogil:
        cdef int i, k
        for i in range(self.nb):
            for k in range(6):
                self.wrench[i][k] = w[i, k]

    # -- python API -----------------------------------------------------------

    def fk(self, q):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef int i, k
        self._fk(&qv[0])
        R = np.empty((self.nb, 3, 3))
        p = np.empty((self.nb, 3))
        cdef double[:, :, ::1] Rv = R
        cdef double[:, ::1] pv = p
        for i in range(self.nb):
            for k in range(9):
                Rv[i, k // 3, k % 3] = self.R[i][k]
            for k in range(3):
                pv[i, k] = self.p[i][k]
        return R, p

    def body_velocities(self, q, v):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
        self._kin(&qv[0], &vv[0])
        out = np.empty((self.nb, 6))
        cdef double[:, ::1] o = out
        cdef int i, k
        for i in range(self.nb):
            for k in range(6):
                o[i, k] = self.V[i][k]
        return out

    def com_position(self, q):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef int i
        cdef double c[3]
        self._fk(&qv[0])
        self._com_world()
        c[0] = 0.0
        c[1] = 0.0
        c[2] = 0.0
        for i in range(self.nb):
            c[0] += self.m[i] * self.cw[i][0]
            c[1] += self.m[i] * self.cw[i][1]
            c[2] += self.m[i] * self.cw[i][2]
        return np.array([c[0], c[1], c[2]]) / self.total_mass

    def linear_momentum(self, q, v):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
        cdef double P[3]
        self._kin(&qv[0], &vv[0])
        self._com_world()
        self._momentum(P)
        return np.array([P[0], P[1], P[2]])

    def mass_matrix(self, q):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef double zeros[MAXV]
        memset(zeros, 0, MAXV * sizeof(double))
        self._kin(&qv[0], zeros)
        self._inertias()
        self._crba()
        out = np.empty((self.nv, self.nv))
        cdef double[:, ::1] o = out
        cdef int i, j
        for i in range(self.nv):
            for j in range(self.nv):
                o[i, j] = self.M[i * self.nv + j]
        return out

    def rnea(self, q, v, qdd, wrench, gravity):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
        cdef const double[::1] av = np.ascontiguousarray(qdd, dtype=np.float64)
        cdef const double[::1] gv = np.ascontiguousarray(gravity, dtype=np.float64)
        cdef const double[:, ::1] wv = np.ascontiguousarray(np.reshape(wrench, (self.nb, 6)), dtype=np.float64)
        out = np.zeros(self.nv)
        cdef double[::1] o = out
        self._kin(&qv[0], &vv[0])
        self._inertias()
        self._load_wrench(wv)
        self._rnea(&vv[0], &av[0], &gv[0], &o[0])
        return out

    def forward_dynamics(self, q, v, tau, wrench, gravity, lock_root=False):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
        cdef const double[::1] tv = np.ascontiguousarray(tau, dtype=np.float64)
        cdef const double[::1] gv = np.ascontiguousarray(gravity, dtype=np.float64)
        cdef const double[:, ::1] wv = np.ascontiguousarray(np.reshape(wrench, (self.nb, 6)), dtype=np.float64)
        out = np.zeros(self.nv)
        cdef double[::1] o = out
        self._kin(&qv[0], &vv[0])
        self._load_wrench(wv)
        if self._fd(&vv[0], &tv[0], &gv[0], 1 if lock_root else 0, &o[0]) != 0:
            raise np.linalg.LinAlgError("mass matrix is not positive definite")
        return out

    def contact(self, q, v, double mu, double kn, double dn, double veps):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
        self._kin(&qv[0], &vv[0])
        self._contact(mu, kn, dn, veps)
        pos = np.empty((self.ns, 3))
        force = np.empty((self.ns, 3))
        cdef double[:, ::1] pp = pos
        cdef double[:, ::1] ff = force
        cdef int i, k
        for i in range(self.ns):
            for k in range(3):
                pp[i, k] = self.spos[i][k]
                ff[i, k] = self.sforce[i][k]
        return pos, force

    def springs(self, q, v):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
        self._kin(&qv[0], &vv[0])
        self._springs()
        xa = np.empty((self.nsp, 3))
        xb = np.empty((self.nsp, 3))
        f = np.empty((self.nsp, 3))
        cdef double[:, ::1] a = xa
        cdef double[:, ::1] b = xb
        cdef double[:, ::1] ff = f
        cdef int i, k
        for i in range(self.nsp):
            for k in range(3):
                a[i, k] = self.xa[i][k]
                b[i, k] = self.xb[i][k]
                ff[i, k] = self.fsp[i][k]
        return xa, xb, f

    def passive_torques(self, q, v):
        cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
        out = np.zeros(self.nv)
        cdef double[::1] o = out
        self._passive(&qv[0], &vv[0], &o[0])
        return out

    def step(self, double[::1] q, double[::1] v, tau, wrench, gravity, double dt, lock_root=False):
        cdef const double[::1] tv = np.ascontiguousarray(tau, dtype=np.float64)
        cdef const double[::1] gv = np.ascontiguousarray(gravity, dtype=np.float64)
        cdef const double[:, ::1] wv = np.ascontiguousarray(np.reshape(wrench, (self.nb, 6)), dtype=np.float64)
        cdef int i
        self._kin(&q[0], &v[0])
        self._load_wrench(wv)
        for i in range(self.nv):
            self.tau[i] = tv[i]
        if self._advance(&q[0], &v[0], &gv[0], dt, 1 if lock_root else 0, 0) != 0:
            raise np.linalg.LinAlgError("mass matrix is not positive definite")
        for i in range(self.nq):
            if not isfinite(q[i]):
                return 1
        for i in range(self.nv):
            if not isfinite(v[i]):
                return 1
        return 0

    def simulate(self, double[::1] q, double[::1] v, target0, target1,
                 double kp, double kv, double tau_max, strength,
                 pert_body, pert_point, pert_f0, pert_f1,
                 gravity, double mu, double kn, double dn, double veps, double dt, int nsub,
                 lock_root, double q_bound, double v_bound,
                 double[::1] out_tau, double[::1] out_peak):
        cdef const double[::1] t0 = np.ascontiguousarray(target0, dtype=np.float64)
        cdef const double[::1] t1 = np.ascontiguousarray(target1, dtype=np.float64)
        cdef const double[::1] st = np.ascontiguousarray(strength, dtype=np.float64)
        cdef const double[::1] gv = np.ascontiguousarray(gravity, dtype=np.float64)
        cdef const long[::1] pb = np.ascontiguousarray(pert_body, dtype=np.int64)
        cdef const double[:, ::1] pp = np.ascontiguousarray(np.reshape(pert_point, (-1, 3)), dtype=np.float64)
        cdef const double[:, ::1] f0 = np.ascontiguousarray(np.reshape(pert_f0, (-1, 3)), dtype=np.float64)
        cdef const double[:, ::1] f1 = np.ascontiguousarray(np.reshape(pert_f1, (-1, 3)), dtype=np.float64)
        cdef int npert = pb.shape[0]
        cdef int lock = 1 if lock_root else 0
        cdef int status
        with nogil:
            status = self._simulate(&q[0], &v[0], &t0[0], &t1[0], kp, kv, tau_max, &st[0],
                                    npert, &pb[0] if npert > 0 else NULL, pp, f0, f1,
                                    &gv[0], mu, kn, dn, veps, dt, nsub, lock, q_bound, v_bound,
                                    &out_tau[0], &out_peak[0])
        if status < 0:
            raise np.linalg.LinAlgError("mass matrix is not positive definite")
        return status

    cdef int _simulate(self, double* q, double* v, const double* t0, const double* t1,
                       double kp, double kv, double tau_max, const double* strength,
                       int npert, const long* pb, const double[:, ::1] pp,
                       const double[:, ::1] f0, const double[:, ::1] f1,
                       const double* g, double mu, double kn, double dn, double veps, double dt,
                       int nsub, int lock, double q_bound, double v_bound,
                       double* out_tau, double* out_peak) noexcept nogil:
        cdef int k, j, b, s, i
        cdef double alpha, target, raw, t
        cdef double x[3]
        cdef double f[3]
        for j in range(self.nact):
            out_peak[j] = 0.0
        self._kin(q, v)
        for k in range(nsub):
            alpha = (k + 1.0) / nsub
            self._passive(q, v, self.tau)
            for j in range(self.nact):
                b = self.act_body[j]
                target = (1.0 - alpha) * t0[j] + alpha * t1[j]
                raw = strength[j] * (kp * (target - q[6 + b]) - kv * v[5 + b])
                t = raw
                if t > tau_max:
                    t = tau_max
                elif t < -tau_max:
                    t = -tau_max
                self.tau[5 + b] += t
                out_tau[j] = t
                if fabs(t) > out_peak[j]:
                    out_peak[j] = fabs(t)
            memset(self.wrench, 0, self.nb * 6 * sizeof(double))
            self._contact(mu, kn, dn, veps)
            for s in range(self.ns):
                self._add_point_force(self.sensor_body[s], self.spos[s], self.sforce[s], 1.0)
            self._springs()
            for s in range(self.nsp):
                self._add_point_force(self.spring_b[s], self.xb[s], self.fsp[s], 1.0)
                self._add_point_force(self.spring_a[s], self.xa[s], self.fsp[s], -1.0)
            for s in range(npert):
                b = pb[s]
                matvec3(self.R[b], &pp[s, 0], x)
                for i in range(3):
                    x[i] += self.p[b][i]
                    f[i] = (1.0 - alpha) * f0[s, i] + alpha * f1[s, i]
                self._add_point_force(b, x, f, 1.0)
            if self._advance(q, v, g, dt, lock, 1) != 0:
                return -1
            for i in range(self.nq):
                if not (fabs(q[i]) < q_bound):
                    return 1
            for i in range(self.nv):
                if not (fabs(v[i]) < v_bound):
                    return 1
        return 0
