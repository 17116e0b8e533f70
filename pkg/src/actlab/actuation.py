"""Action parameterizations: torques, PD targets, target velocities, muscles.

Each model maps a policy action to joint torques once per simulation
substep.  Muscle units are Hill-type: a contractile element (CE) in parallel
with a passive element (PE), both in series with an elastic tendon (SE).  The
CE length is advanced with a backward-Euler step that solves the force
equilibrium ``F_SE = F_CE + F_PE`` at the end of the substep, so the
equilibrium holds to solver tolerance after every update.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .rigid2d import CharacterFormatError, parse_json_text, resolve_data_path

KINDS = ("tor", "vel", "pd", "mtu")
KIND_CODE = {k: i for i, k in enumerate(KINDS)}


CE_MIN = 0.05  # hard floor on CE length, fraction of the optimal length


class ActuationError(FloatingPointError):
    """Non-finite torque produced by an actuator."""


@dataclass(frozen=True)
class MuscleConstants:
    """Shape constants of the muscle curves (normalized units)."""

    fl_width: float = 0.56
    fl_c: float = math.log(0.05)
    v_max: float = 10.0  # optimal lengths per second
    fv_curvature: float = 5.0
    fv_cap: float = 1.5
    fv_ext_slope: float = 12.0
    se_strain: float = 0.04
    pe_strain: float = 0.56

    def as_array(self):
        return np.array([self.fl_width, self.fl_c, self.v_max, self.fv_curvature,
                         self.fv_cap, self.fv_ext_slope, self.se_strain, self.pe_strain])


DEFAULT_MUSCLE = MuscleConstants()


@dataclass(frozen=True)
class MtuUnit:
    name: str
    joints: tuple[int, ...]
    moment_arm: tuple[float, ...]
    q_max: tuple[float, ...]
    q_rest: tuple[float, ...]
    l_opt: float
    l_se_rest: float
    f_max: float
    pennation: float = 0.0

    def __post_init__(self):
        n = len(self.joints)
        if n == 0 or not (len(self.moment_arm) == len(self.q_max) == len(self.q_rest) == n):
            raise ValueError(f"{self.name}: one moment-arm triple per spanned joint required")
        if not (self.l_opt > 0 and self.l_se_rest > 0 and self.f_max > 0):
            raise ValueError(f"{self.name}: l_opt, l_se_rest and f_max must be positive")
        if any(r == 0 for r in self.moment_arm):
            raise ValueError(f"{self.name}: moment arms must be non-zero")
        if not 0 <= self.pennation < math.pi / 2:
            raise ValueError(f"{self.name}: pennation must lie in [0, pi/2)")


@dataclass(frozen=True)
class ParamVector:
    """Flattened tunable actuator parameters with per-entry search bounds."""

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...]

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class ActuationModel:
    kind: str
    lower: np.ndarray
    upper: np.ndarray
    torque_limit: np.ndarray
    kp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kd: np.ndarray = field(default_factory=lambda: np.zeros(0))
    units: tuple[MtuUnit, ...] = ()
    muscle: MuscleConstants = DEFAULT_MUSCLE
    param_lower: np.ndarray | None = None
    param_upper: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown actuation kind {self.kind!r}")
        for name in ("lower", "upper", "torque_limit", "kp", "kd"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64).reshape(-1))
        nj = len(self.torque_limit)
        dim = len(self.units) if self.kind == "mtu" else nj
        if self.lower.shape != (dim,) or self.upper.shape != (dim,):
            raise ValueError(f"{self.kind}: expected {dim} action bounds")
        if not np.all(self.lower < self.upper):
            raise ValueError("action bounds must satisfy lower < upper")
        if self.kind == "mtu":
            if not (np.all(self.lower == 0.0) and np.all(self.upper == 1.0)):
                raise ValueError("muscle activation bounds must be exactly [0, 1]")
            if not self.units:
                raise ValueError("mtu model needs at least one unit")
            for u in self.units:
                if any(j < 0 or j >= nj for j in u.joints):
                    raise ValueError(f"{u.name}: spanned joint index out of range")
        if self.kind in ("pd", "vel"):
            if self.kd.shape != (nj,) or np.any(self.kd < 0):
                raise ValueError("kd must be non-negative, one per joint")
        if self.kind == "pd" and (self.kp.shape != (nj,) or np.any(self.kp < 0)):
            raise ValueError("kp must be non-negative, one per joint")
        if self.param_lower is None:
            lo, hi = _default_param_bounds(self)
            object.__setattr__(self, "param_lower", lo)
            object.__setattr__(self, "param_upper", hi)
        object.__setattr__(self, "_tables", _unit_tables(self))

    @property
    def action_dim(self):
        return len(self.lower)

    @property
    def n_units(self):
        return len(self.units) if self.kind == "mtu" else 0

    def __eq__(self, other):
        if not isinstance(other, ActuationModel):
            return NotImplemented
        arrays = ("lower", "upper", "torque_limit", "kp", "kd", "param_lower", "param_upper")
        return (self.kind == other.kind and self.units == other.units and self.muscle == other.muscle
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))


# ---------------------------------------------------------------------------
# Muscle curves


@numba.njit(cache=True)
def _fl(x, width, c):
    u = abs((x - 1.0) / width)
    return math.exp(c * u * u * u)


@numba.njit(cache=True)
def _dfl(x, width, c):
    u = (x - 1.0) / width
    return _fl(x, width, c) * c * 3.0 * u * abs(u) / width


@numba.njit(cache=True)
def _fv(n, curv, cap, ext):
    if n <= -1.0:
        return 0.0
    if n < 0.0:
        return (1.0 + n) / (1.0 - curv * n)
    return (1.0 + cap * ext * n) / (1.0 + ext * n)


@numba.njit(cache=True)
def _dfv(n, curv, cap, ext):
    if n <= -1.0:
        return 0.0
    if n < 0.0:
        d = 1.0 - curv * n
        return (1.0 + curv) / (d * d)
    d = 1.0 + ext * n
    return ext * (cap - 1.0) / (d * d)


def muscle_curves(l_norm, v_norm, constants=DEFAULT_MUSCLE):
    """Force-length and force-velocity factors.

    ``l_norm`` is CE length over optimal length; ``v_norm`` is CE lengthening
    velocity over the maximum shortening velocity (shortening is negative).
    """
    l_norm = np.asarray(l_norm, dtype=np.float64)
    v_norm = np.asarray(v_norm, dtype=np.float64)
    if np.any(l_norm <= 0):
        raise ValueError("CE length must be positive")
    c = constants
    fl = np.exp(c.fl_c * np.abs((l_norm - 1.0) / c.fl_width) ** 3)
    fv = np.vectorize(lambda n: _fv(n, c.fv_curvature, c.fv_cap, c.fv_ext_slope), otypes=[float])(v_norm)
    return fl, fv


@numba.njit(cache=True)
def _se_force(l_se, l_ser, f0, strain):
    d = l_se - l_ser
    if d <= 0.0:
        return 0.0, 0.0
    k = f0 / (l_ser * strain) ** 2
    return k * d * d, 2.0 * k * d


@numba.njit(cache=True)
def _pe_force(l, l_opt, f0, strain):
    d = l - l_opt
    if d <= 0.0:
        return 0.0, 0.0
    k = f0 / (l_opt * strain) ** 2
    return k * d * d, 2.0 * k * d


@numba.njit(cache=True)
def _residual(l, l_prev, a, l_mtu, l_opt, l_ser, f0, cos_p, dt, mc):
    """Equilibrium residual F_SE - F_CE - F_PE along the tendon and its slope."""
    width, c, vmax_f, curv, cap, ext, se_strain, pe_strain = (
        mc[0], mc[1], mc[2], mc[3], mc[4], mc[5], mc[6], mc[7])
    v_max = vmax_f * l_opt
    fse, dfse = _se_force(l_mtu - l * cos_p, l_ser, f0, se_strain)
    fpe, dfpe = _pe_force(l, l_opt, f0, pe_strain)
    n = (l - l_prev) / (dt * v_max)
    x = l / l_opt
    fl = _fl(x, width, c)
    fv = _fv(n, curv, cap, ext)
    fce = a * f0 * fl * fv
    dfce = a * f0 * (_dfl(x, width, c) / l_opt * fv + fl * _dfv(n, curv, cap, ext) / (dt * v_max))
    g = fse - cos_p * (fce + fpe)
    dg = -cos_p * dfse - cos_p * (dfce + dfpe)
    return g, dg, cos_p * fce, cos_p * fpe, fse


@numba.njit(cache=True)
def _mtu_update(a, l_prev, l_mtu, l_opt, l_ser, f0, pennation, dt, mc):
    """Backward-Euler CE update.

    Returns (l_new, F_SE, F_CE, F_PE) with CE and PE forces projected on the
    tendon line.
    """
    cos_p = math.cos(pennation)
    tol = 1e-10 * f0
    g, dg, fce, fpe, fse = _residual(l_prev, l_prev, a, l_mtu, l_opt, l_ser, f0, cos_p, dt, mc)
    if abs(g) <= tol:
        return l_prev, fse, fce, fpe
    if g > 0.0:
        lo = l_prev
        hi = l_mtu / cos_p + l_opt
    else:
        hi = l_prev
        lo = CE_MIN * l_opt
        if lo >= hi:
            gl, _, fce, fpe, fse = _residual(lo, l_prev, a, l_mtu, l_opt, l_ser, f0, cos_p, dt, mc)
            return lo, fse, fce, fpe
        glo = _residual(lo, l_prev, a, l_mtu, l_opt, l_ser, f0, cos_p, dt, mc)[0]
        if glo < 0.0:
            gl, _, fce, fpe, fse = _residual(lo, l_prev, a, l_mtu, l_opt, l_ser, f0, cos_p, dt, mc)
            return lo, fse, fce, fpe
    x = l_prev
    for _ in range(200):
        g, dg, fce, fpe, fse = _residual(x, l_prev, a, l_mtu, l_opt, l_ser, f0, cos_p, dt, mc)
        if abs(g) <= tol:
            break
        if g > 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= 1e-15 * (1.0 + hi):
            break
        step_ok = False
        if dg < 0.0:
            xn = x - g / dg
            if lo < xn < hi:
                x = xn
                step_ok = True
        if not step_ok:
            x = 0.5 * (lo + hi)
    return x, fse, fce, fpe


@numba.njit(cache=True)
def _mtu_lengths(q, span_joint, span_r0, span_qmax, span_qrest, l_opt, l_ser):
    nu, ns = span_joint.shape
    out = np.empty(nu)
    for u in range(nu):
        l = l_ser[u] + l_opt[u]
        for s in range(ns):
            j = span_joint[u, s]
            if j < 0:
                continue
            l -= span_r0[u, s] * (math.sin(q[3 + j] - span_qmax[u, s])
                                  - math.sin(span_qrest[u, s] - span_qmax[u, s]))
        out[u] = l
    return out


@numba.njit(cache=True)
def _torques(kind, action, q, qd, l_ce, dt, lower, upper, kp, kd, tau_lim,
             span_joint, span_r0, span_qmax, span_qrest, l_opt, l_ser, f0, penn, mc):
    """Joint torques for one substep; also returns updated CE lengths and
    per-unit tendon forces."""
    nj = tau_lim.shape[0]
    na = action.shape[0]
    act = np.empty(na)
    for i in range(na):
        v = action[i]
        if v < lower[i]:
            v = lower[i]
        elif v > upper[i]:
            v = upper[i]
        act[i] = v
    tau = np.zeros(nj)
    nu = span_joint.shape[0]
    l_new = l_ce.copy()
    f_mtu = np.zeros(nu)
    if kind == 0:
        for j in range(nj):
            tau[j] = act[j]
    elif kind == 1:
        for j in range(nj):
            tau[j] = kd[j] * (act[j] - qd[3 + j])
    elif kind == 2:
        for j in range(nj):
            tau[j] = kp[j] * (act[j] - q[3 + j]) + kd[j] * (0.0 - qd[3 + j])
    else:
        l_mtu = _mtu_lengths(q, span_joint, span_r0, span_qmax, span_qrest, l_opt, l_ser)
        for u in range(nu):
            l, fse, fce, fpe = _mtu_update(act[u], l_ce[u], l_mtu[u], l_opt[u], l_ser[u],
                                           f0[u], penn[u], dt, mc)
            l_new[u] = l
            f_mtu[u] = fse
            for s in range(span_joint.shape[1]):
                j = span_joint[u, s]
                if j < 0:
                    continue
                tau[j] += span_r0[u, s] * math.cos(q[3 + j] - span_qmax[u, s]) * fse
    for j in range(nj):
        lim = tau_lim[j]
        if tau[j] > lim:
            tau[j] = lim
        elif tau[j] < -lim:
            tau[j] = -lim
    return tau, l_new, f_mtu


@numba.njit(cache=True)
def _drive(kind, action, q, qd, l_ce, dt, lower, upper, kp, kd, tau_lim,
           span_joint, span_r0, span_qmax, span_qrest, l_opt, l_ser, f0, penn, mc):
    """Like ``_torques`` but splits PD and velocity control into an explicit
    part and a joint damping that the integrator treats implicitly.

    Returns (tau, damping, l_new, f_mtu); ``tau`` is unclamped where the
    damping is non-zero.
    """
    nj = tau_lim.shape[0]
    damp = np.zeros(nj)
    if kind == 1 or kind == 2:
        tau = np.zeros(nj)
        for j in range(nj):
            a = min(max(action[j], lower[j]), upper[j])
            if kind == 1:
                tau[j] = kd[j] * a
            else:
                tau[j] = kp[j] * (a - q[3 + j])
            damp[j] = kd[j]
        return tau, damp, l_ce.copy(), np.zeros(span_joint.shape[0])
    tau, l_new, f = _torques(kind, action, q, qd, l_ce, dt, lower, upper, kp, kd, tau_lim,
                             span_joint, span_r0, span_qmax, span_qrest, l_opt, l_ser, f0,
                             penn, mc)
    return tau, damp, l_new, f


@dataclass(frozen=True)
class _Tables:
    span_joint: np.ndarray
    span_r0: np.ndarray
    span_qmax: np.ndarray
    span_qrest: np.ndarray
    l_opt: np.ndarray
    l_ser: np.ndarray
    f0: np.ndarray
    penn: np.ndarray


def _unit_tables(model):
    units = model.units if model.kind == "mtu" else ()
    ns = max((len(u.joints) for u in units), default=1)
    nu = len(units)
    tab = _Tables(
        span_joint=-np.ones((nu, ns), dtype=np.int64),
        span_r0=np.zeros((nu, ns)), span_qmax=np.zeros((nu, ns)), span_qrest=np.zeros((nu, ns)),
        l_opt=np.array([u.l_opt for u in units], dtype=np.float64),
        l_ser=np.array([u.l_se_rest for u in units], dtype=np.float64),
        f0=np.array([u.f_max for u in units], dtype=np.float64),
        penn=np.array([u.pennation for u in units], dtype=np.float64),
    )
    for i, u in enumerate(units):
        k = len(u.joints)
        tab.span_joint[i, :k] = u.joints
        tab.span_r0[i, :k] = u.moment_arm
        tab.span_qmax[i, :k] = u.q_max
        tab.span_qrest[i, :k] = u.q_rest
    return tab


def kernel_args(model):
    """Positional arguments consumed by ``_torques`` after ``dt``."""
    t = model._tables
    kp = model.kp if len(model.kp) else np.zeros(len(model.torque_limit))
    kd = model.kd if len(model.kd) else np.zeros(len(model.torque_limit))
    return (model.lower, model.upper, kp, kd, model.torque_limit, t.span_joint, t.span_r0,
            t.span_qmax, t.span_qrest, t.l_opt, t.l_ser, t.f0, t.penn, model.muscle.as_array())


# ---------------------------------------------------------------------------
# Public operations


def compute_torques(model, action, q, qd, l_ce=None, dt=1.0 / 600.0):
    """Torques for one substep and the updated CE lengths.

    Actions outside the bounds are clamped; torques are clamped to the
    character's limits.
    """
    action = np.asarray(action, dtype=np.float64).reshape(-1)
    if action.shape != (model.action_dim,):
        raise ValueError(f"expected action of length {model.action_dim}")
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    if model.kind == "mtu":
        if l_ce is None or len(l_ce) != model.n_units:
            raise ValueError("mtu actuation needs one CE length per unit")
    elif l_ce is not None and len(l_ce):
        raise ValueError("CE lengths only apply to mtu actuation")
    l_ce = np.zeros(0) if l_ce is None else np.asarray(l_ce, dtype=np.float64)
    tau, l_new, _ = _torques(KIND_CODE[model.kind], action, q, qd, l_ce, dt, *kernel_args(model))
    bad = np.flatnonzero(~np.isfinite(tau))
    if len(bad):
        raise ActuationError(f"non-finite torque at joint {int(bad[0])}")
    return tau, l_new


def mtu_forces(model, action, q, l_ce, dt=1.0 / 600.0):
    """Per-unit (l_CE new, F_SE, F_CE, F_PE) for one substep update."""
    t = model._tables
    l_mtu = _mtu_lengths(np.asarray(q, dtype=np.float64), t.span_joint, t.span_r0, t.span_qmax,
                         t.span_qrest, t.l_opt, t.l_ser)
    a = np.clip(np.asarray(action, dtype=np.float64), 0.0, 1.0)
    mc = model.muscle.as_array()
    out = np.array([_mtu_update(a[u], l_ce[u], l_mtu[u], t.l_opt[u], t.l_ser[u], t.f0[u],
                                t.penn[u], dt, mc) for u in range(model.n_units)])
    return out.reshape(-1, 4)


def mtu_lengths(model, q):
    t = model._tables
    return _mtu_lengths(np.asarray(q, dtype=np.float64), t.span_joint, t.span_r0, t.span_qmax,
                        t.span_qrest, t.l_opt, t.l_ser)


def contractile_force(unit, activation, l_ce, v_ce, constants=DEFAULT_MUSCLE):
    """Active CE force ``a F0 f_l f_v`` (along the fiber)."""
    fl, fv = muscle_curves(l_ce / unit.l_opt, v_ce / (constants.v_max * unit.l_opt), constants)
    return activation * unit.f_max * fl * fv


def passive_lengths(model, q):
    """CE lengths in static passive equilibrium (zero activation) at pose ``q``."""
    if model.kind != "mtu":
        return np.zeros(0)
    t = model._tables
    l_mtu = mtu_lengths(model, q)
    mc = model.muscle.as_array()
    out = np.empty(model.n_units)
    for u in range(model.n_units):
        cos_p = math.cos(t.penn[u])
        if l_mtu[u] - t.l_opt[u] * cos_p <= t.l_ser[u]:
            out[u] = t.l_opt[u]
            continue
        lo, hi = t.l_opt[u], l_mtu[u] / cos_p
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            # a = 0 removes the CE term; velocity is irrelevant
            g = _residual(mid, mid, 0.0, l_mtu[u], t.l_opt[u], t.l_ser[u], t.f0[u], cos_p, 1.0, mc)[0]
            if g > 0:
                lo = mid
            else:
                hi = mid
        out[u] = 0.5 * (lo + hi)
    return out


def action_bounds(model):
    return np.stack([model.lower, model.upper], axis=1)


# ---------------------------------------------------------------------------
# Actuator parameter vector


def _raw_params(model):
    names, values, angle = [], [], []
    if model.kind == "pd":
        for j, v in enumerate(model.kp):
            names.append(f"kp[{j}]"); values.append(v); angle.append(False)
    if model.kind in ("pd", "vel"):
        for j, v in enumerate(model.kd):
            names.append(f"kd[{j}]"); values.append(v); angle.append(False)
    if model.kind == "mtu":
        for u in model.units:
            for key in ("l_opt", "l_se_rest", "f_max"):
                names.append(f"{u.name}.{key}"); values.append(getattr(u, key)); angle.append(False)
            for s in range(len(u.joints)):
                names.append(f"{u.name}.moment_arm[{s}]"); values.append(u.moment_arm[s]); angle.append(False)
                names.append(f"{u.name}.q_max[{s}]"); values.append(u.q_max[s]); angle.append(True)
                names.append(f"{u.name}.q_rest[{s}]"); values.append(u.q_rest[s]); angle.append(True)
    return names, np.array(values, dtype=np.float64), np.array(angle, dtype=bool)


def _default_param_bounds(model, window=0.5, angle_window=0.5):
    _, values, angle = _raw_params(model)
    half = np.where(angle, angle_window, window * np.abs(values))
    return values - half, values + half


def with_param_window(model, window=0.5, angle_window=0.5):
    """Copy of ``model`` whose search bounds are re-centered on its values."""
    lo, hi = _default_param_bounds(model, window, angle_window)
    return replace(model, param_lower=lo, param_upper=hi)


def pack_params(model):
    names, values, _ = _raw_params(model)
    return ParamVector(values=values, lower=model.param_lower.copy(),
                       upper=model.param_upper.copy(), names=tuple(names))


def unpack_params(model, psi):
    """Model with tunable entries replaced by ``psi`` (clamped to its bounds)."""
    psi = np.asarray(getattr(psi, "values", psi), dtype=np.float64).reshape(-1)
    n = len(model.param_lower)
    if psi.shape != (n,):
        raise ValueError(f"parameter vector has length {psi.shape[0]}, expected {n}")
    psi = np.clip(psi, model.param_lower, model.param_upper)
    it = iter(psi.tolist())
    if model.kind == "pd":
        kp = np.array([next(it) for _ in model.kp])
        kd = np.array([next(it) for _ in model.kd])
        return replace(model, kp=kp, kd=kd)
    if model.kind == "vel":
        return replace(model, kd=np.array([next(it) for _ in model.kd]))
    if model.kind == "mtu":
        units = []
        for u in model.units:
            l_opt, l_ser, f_max = next(it), next(it), next(it)
            r0, qm, qr = [], [], []
            for _ in u.joints:
                r0.append(next(it)); qm.append(next(it)); qr.append(next(it))
            units.append(replace(u, l_opt=l_opt, l_se_rest=l_ser, f_max=f_max,
                                 moment_arm=tuple(r0), q_max=tuple(qm), q_rest=tuple(qr)))
        return replace(model, units=tuple(units))
    return model


# ---------------------------------------------------------------------------
# File format


def actuation_from_dict(doc, character, source="<dict>"):
    if not isinstance(doc, dict):
        raise CharacterFormatError(f"{source}: top level must be an object")
    kind = str(doc.get("kind", "")).lower()
    if kind not in KINDS:
        raise CharacterFormatError(f"{source}: kind: expected one of {KINDS}")
    joint_names = [j.name for j in character.joints]
    nj = len(joint_names)

    def per_joint(key):
        raw = doc.get(key)
        if isinstance(raw, dict):
            missing = [n for n in joint_names if n not in raw]
            if missing:
                raise CharacterFormatError(f"{source}: {key}: missing joints {missing}")
            return np.array([float(raw[n]) for n in joint_names])
        if isinstance(raw, (list, tuple)) and len(raw) == nj:
            return np.array(raw, dtype=np.float64)
        if isinstance(raw, (int, float)):
            return np.full(nj, float(raw))
        raise CharacterFormatError(f"{source}: {key}: expected {nj} per-joint values")

    kp = per_joint("kp") if kind == "pd" else np.zeros(0)
    kd = per_joint("kd") if kind in ("pd", "vel") else np.zeros(0)
    units = ()
    if kind == "mtu":
        raw_units = doc.get("units")
        if not isinstance(raw_units, list) or not raw_units:
            raise CharacterFormatError(f"{source}: units: expected a non-empty list")
        parsed = []
        for i, u in enumerate(raw_units):
            where = f"{source}: units[{i}]"
            try:
                spans = u["spans"]
                joints = tuple(joint_names.index(s["joint"]) for s in spans)
                parsed.append(MtuUnit(
                    name=str(u["name"]), joints=joints,
                    moment_arm=tuple(float(s["moment_arm"]) for s in spans),
                    q_max=tuple(float(s["q_max"]) for s in spans),
                    q_rest=tuple(float(s["q_rest"]) for s in spans),
                    l_opt=float(u["l_opt"]), l_se_rest=float(u["l_se_rest"]),
                    f_max=float(u["f_max"]), pennation=float(u.get("pennation", 0.0)),
                ))
            except (KeyError, TypeError) as exc:
                raise CharacterFormatError(f"{where}: missing or malformed field {exc}") from None
            except ValueError as exc:
                raise CharacterFormatError(f"{where}: {exc}") from None
        units = tuple(parsed)

    if kind == "mtu":
        lower, upper = np.zeros(len(units)), np.ones(len(units))
    elif kind == "pd":
        lower, upper = character.joint_limits[:, 0], character.joint_limits[:, 1]
    elif kind == "tor":
        lower, upper = -character.torque_limits, character.torque_limits
    else:
        vb = per_joint("velocity_bound") if "velocity_bound" in doc else np.full(nj, 10.0)
        lower, upper = -vb, vb
    if "bounds" in doc and kind != "mtu":
        b = doc["bounds"]
        lower = np.array(b["lower"], dtype=np.float64)
        upper = np.array(b["upper"], dtype=np.float64)
    muscle = MuscleConstants(**doc.get("muscle_constants", {}))
    try:
        model = ActuationModel(kind=kind, lower=lower, upper=upper,
                               torque_limit=character.torque_limits, kp=kp, kd=kd,
                               units=units, muscle=muscle)
    except ValueError as exc:
        raise CharacterFormatError(f"{source}: {exc}") from None
    window = doc.get("search_window", {})
    model = with_param_window(model, float(window.get("relative", 0.5)),
                              float(window.get("angle", 0.5)))
    if "param_bounds" in doc:
        pb = doc["param_bounds"]
        model = replace(model, param_lower=np.array(pb["lower"], dtype=np.float64),
                        param_upper=np.array(pb["upper"], dtype=np.float64))
    return model


def load_actuation(source, character):
    if isinstance(source, str) and source.lstrip().startswith("{"):
        return actuation_from_dict(parse_json_text(source), character)
    path = resolve_data_path(source)
    return actuation_from_dict(parse_json_text(path.read_text(), str(path)), character, str(path))


def actuation_to_dict(model, character):
    """Structured-text form of ``model`` (inverse of ``actuation_from_dict``)."""
    names = [j.name for j in character.joints]
    doc = {"kind": model.kind}
    if model.kind == "pd":
        doc["kp"] = dict(zip(names, model.kp.tolist()))
    if model.kind in ("pd", "vel"):
        doc["kd"] = dict(zip(names, model.kd.tolist()))
    if model.kind != "mtu":
        doc["bounds"] = {"lower": model.lower.tolist(), "upper": model.upper.tolist()}
    if model.kind == "mtu":
        doc["units"] = [{
            "name": u.name, "l_opt": u.l_opt, "l_se_rest": u.l_se_rest, "f_max": u.f_max,
            "pennation": u.pennation,
            "spans": [{"joint": names[j], "moment_arm": r, "q_max": qm, "q_rest": qr}
                      for j, r, qm, qr in zip(u.joints, u.moment_arm, u.q_max, u.q_rest)],
        } for u in model.units]
    if model.muscle != DEFAULT_MUSCLE:
        doc["muscle_constants"] = model.muscle.__dict__.copy()
    doc["param_bounds"] = {"lower": model.param_lower.tolist(), "upper": model.param_upper.tolist()}
    return doc


def dump_actuation(model, character):
    return json.dumps(actuation_to_dict(model, character), indent=1)
