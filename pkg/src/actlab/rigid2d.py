"""Planar articulated rigid-body simulation in reduced coordinates.

The generalized coordinates are ``q = (x, y, theta, q_1 .. q_J)``: the root
frame position, the root orientation and one relative angle per revolute
joint.  Every point attached to the tree (link COMs, contact points) is
expressed as ``(x, y) + sum_k R(phi_k) p_k`` where ``phi_k`` is the world
angle of frame ``k``.  That single representation gives positions, Jacobians
and velocity-product accelerations, from which the mass matrix and bias
forces are assembled each substep.

Contacts are penalty springs with regularized Coulomb friction.  The contact
damping and the linear part of the friction law are integrated implicitly,
which keeps 600 Hz semi-implicit Euler stable on stiff ground.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

GRAVITY = 9.81


class CharacterFormatError(ValueError):
    """Raised for malformed or inconsistent character documents."""


class IntegrationError(FloatingPointError):
    """Raised when a substep produces non-finite state."""

    def __init__(self, quantity, value=None):
        self.quantity = quantity
        self.value = value
        super().__init__(f"integration blow-up in {quantity}")


@dataclass(frozen=True)
class Link:
    name: str
    length: float
    mass: float
    com_offset: tuple[float, float]
    inertia: float
    axis_angle: float = math.pi / 2


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int
    child: int
    parent_anchor: tuple[float, float]
    child_anchor: tuple[float, float]
    limits: tuple[float, float]
    torque_limit: float


@dataclass(frozen=True)
class ContactPoint:
    link: int
    offset: tuple[float, float]


@dataclass(frozen=True)
class ContactConfig:
    ground_height: float = 0.0
    stiffness: float = 6.0e4
    damping: float = 1.5e3
    friction: float = 0.9
    friction_velocity: float = 0.05

    def __post_init__(self):
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError("contact stiffness and damping must be non-negative")
        if self.friction < 0:
            raise ValueError("friction coefficient must be non-negative")
        if self.friction_velocity <= 0:
            raise ValueError("friction regularization velocity must be positive")


class Ground:
    """Piecewise-linear ground height ``h(x)``.

    Segment ``i`` spans ``[x0[i], x1[i]]`` and interpolates linearly from
    ``h0[i]`` to ``h1[i]``; adjacent segments may disagree at their shared
    abscissa (steps).  Outside the covered range the end heights extend flat.
    """

    def __init__(self, x0, x1, h0, h1):
        self.x0 = np.ascontiguousarray(x0, dtype=np.float64)
        self.x1 = np.ascontiguousarray(x1, dtype=np.float64)
        self.h0 = np.ascontiguousarray(h0, dtype=np.float64)
        self.h1 = np.ascontiguousarray(h1, dtype=np.float64)
        if not (len(self.x0) == len(self.x1) == len(self.h0) == len(self.h1) >= 1):
            raise ValueError("ground needs at least one segment and equal-length arrays")
        if np.any(self.x1 <= self.x0) or np.any(np.diff(self.x0) <= 0):
            raise ValueError("ground segments must be ordered and non-empty")

    @classmethod
    def flat(cls, height=0.0):
        return cls([-1e9], [1e9], [height], [height])

    def height(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(x.shape)
        flat_x = x.reshape(-1)
        flat_out = out.reshape(-1)
        for i, xi in enumerate(flat_x):
            flat_out[i] = _ground_at(self.x0, self.x1, self.h0, self.h1, xi)[0]
        return out if out.ndim else float(out)

    def __eq__(self, other):
        return isinstance(other, Ground) and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("x0", "x1", "h0", "h1")
        )

    def __repr__(self):
        return f"Ground({len(self.x0)} segments)"


@dataclass(frozen=True)
class Kinematics:
    """Precomputed tables: frame-angle coefficients and point chain vectors."""

    frame_coef: np.ndarray  # (L, n)
    com_chain: np.ndarray  # (L, L, 2)
    origin_chain: np.ndarray  # (L, L, 2)
    contact_chain: np.ndarray  # (C, L, 2)
    contact_link: np.ndarray  # (C,)
    contact_trunk: np.ndarray  # (C,) bool
    mass: np.ndarray
    inertia: np.ndarray
    torque_limit: np.ndarray
    joint_lower: np.ndarray
    joint_upper: np.ndarray


@dataclass(frozen=True, eq=False)
class CharacterModel:
    name: str
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    root: int
    trunk: tuple[int, ...]
    end_effectors: tuple[int, ...] = ()
    contact_points: tuple[ContactPoint, ...] = ()
    fixed_root: bool = False
    limit_stiffness: float = 1000.0  # passive joint stop, N m / rad
    limit_damping: float = 20.0  # N m s / rad, active only beyond a limit
    kin: Kinematics = field(init=False, repr=False)

    def __post_init__(self):
        _validate(self)
        object.__setattr__(self, "kin", _build_tables(self))

    @property
    def n_links(self):
        return len(self.links)

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def ndof(self):
        return 3 + len(self.joints)

    def link_index(self, name):
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise KeyError(name)

    @property
    def joint_limits(self):
        return np.array([j.limits for j in self.joints], dtype=np.float64).reshape(-1, 2)

    @property
    def torque_limits(self):
        return self.kin.torque_limit.copy()


@dataclass(frozen=True, eq=False)
class DynamicsState:
    q: np.ndarray
    qd: np.ndarray
    time: float = 0.0
    l_ce: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trunk_timer: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64)
        qd = np.array(self.qd, dtype=np.float64)
        l_ce = np.array(self.l_ce, dtype=np.float64).reshape(-1)
        if q.ndim != 1 or q.shape != qd.shape:
            raise ValueError("q and qd must be 1-D with equal length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd)) and np.all(np.isfinite(l_ce))):
            raise ValueError("state entries must be finite")
        if np.any(l_ce <= 0):
            raise ValueError("contractile element lengths must be positive")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)
        object.__setattr__(self, "l_ce", l_ce)

    def replace(self, **kw):
        fields = dict(q=self.q, qd=self.qd, time=self.time, l_ce=self.l_ce,
                      trunk_timer=self.trunk_timer)
        fields.update(kw)
        return DynamicsState(**fields)

    def __eq__(self, other):
        if not isinstance(other, DynamicsState):
            return NotImplemented
        return (np.array_equal(self.q, other.q) and np.array_equal(self.qd, other.qd)
                and self.time == other.time and np.array_equal(self.l_ce, other.l_ce)
                and self.trunk_timer == other.trunk_timer)


# ---------------------------------------------------------------------------
# Loading and validation


def _vec2(value, where):
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise CharacterFormatError(f"{where}: expected a pair of numbers")
    try:
        return (float(value[0]), float(value[1]))
    except (TypeError, ValueError):
        raise CharacterFormatError(f"{where}: expected a pair of numbers") from None


def _num(obj, key, where, default=None):
    if key not in obj:
        if default is not None:
            return float(default)
        raise CharacterFormatError(f"{where}.{key}: missing field")
    try:
        return float(obj[key])
    except (TypeError, ValueError):
        raise CharacterFormatError(f"{where}.{key}: expected a number") from None


def parse_json_text(text, source="<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CharacterFormatError(
            f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def character_from_dict(doc, source="<dict>"):
    if not isinstance(doc, dict):
        raise CharacterFormatError(f"{source}: top level must be an object")
    raw_links = doc.get("links")
    if not isinstance(raw_links, list) or not raw_links:
        raise CharacterFormatError(f"{source}: links: expected a non-empty list")
    links = []
    for i, item in enumerate(raw_links):
        where = f"links[{i}]"
        if not isinstance(item, dict) or "name" not in item:
            raise CharacterFormatError(f"{where}.name: missing field")
        links.append(Link(
            name=str(item["name"]),
            length=_num(item, "length", where),
            mass=_num(item, "mass", where),
            com_offset=_vec2(item.get("com_offset", [0.0, 0.0]), f"{where}.com_offset"),
            inertia=_num(item, "inertia", where),
            axis_angle=_num(item, "axis_angle", where, default=math.pi / 2),
        ))
    names = [l.name for l in links]
    if len(set(names)) != len(names):
        raise CharacterFormatError(f"{source}: links: duplicate link names")
    index = {n: i for i, n in enumerate(names)}

    def lookup(name, where):
        if name not in index:
            raise CharacterFormatError(f"{where}: unknown link {name!r}")
        return index[name]

    joints = []
    for i, item in enumerate(doc.get("joints", [])):
        where = f"joints[{i}]"
        if not isinstance(item, dict):
            raise CharacterFormatError(f"{where}: expected an object")
        limits = item.get("limits")
        if not (isinstance(limits, list) and len(limits) == 2):
            raise CharacterFormatError(f"{where}.limits: expected [lo, hi]")
        joints.append(Joint(
            name=str(item.get("name", f"joint{i}")),
            parent=lookup(item.get("parent"), f"{where}.parent"),
            child=lookup(item.get("child"), f"{where}.child"),
            parent_anchor=_vec2(item.get("parent_anchor"), f"{where}.parent_anchor"),
            child_anchor=_vec2(item.get("child_anchor"), f"{where}.child_anchor"),
            limits=(float(limits[0]), float(limits[1])),
            torque_limit=_num(item, "torque_limit", where),
        ))
    root = lookup(doc.get("root", names[0]), "root")
    trunk = tuple(lookup(n, "trunk") for n in doc.get("trunk", [names[root]]))
    effectors = tuple(lookup(n, "end_effectors") for n in doc.get("end_effectors", []))
    contacts = []
    for i, item in enumerate(doc.get("contact_points", [])):
        where = f"contact_points[{i}]"
        contacts.append(ContactPoint(lookup(item.get("link"), f"{where}.link"),
                                     _vec2(item.get("offset"), f"{where}.offset")))
    return CharacterModel(
        name=str(doc.get("name", Path(source).stem)),
        links=tuple(links), joints=tuple(joints), root=root, trunk=trunk,
        end_effectors=effectors, contact_points=tuple(contacts),
        fixed_root=bool(doc.get("fixed_root", False)),
        limit_stiffness=_num(doc, "limit_stiffness", source, default=1000.0),
        limit_damping=_num(doc, "limit_damping", source, default=20.0),
    )


def load_character(source):
    """Load a character from a path or a JSON document string."""
    text, origin = _read_source(source)
    return character_from_dict(parse_json_text(text, origin), origin)


def _read_source(source):
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        path = resolve_data_path(source)
        return path.read_text(), str(path)
    return source, "<string>"


def resolve_data_path(name):
    """Return ``name`` if it exists, else the bundled data file of that name."""
    path = Path(name)
    if path.exists():
        return path
    bundled = Path(__file__).parent / "data" / path.name
    if bundled.exists():
        return bundled
    raise FileNotFoundError(str(name))


def _validate(model):
    for key in ("limit_stiffness", "limit_damping"):
        val = getattr(model, key)
        if not (val >= 0 and math.isfinite(val)):
            raise CharacterFormatError(f"{key}: must be non-negative and finite")
    for i, link in enumerate(model.links):
        if not (link.mass > 0 and math.isfinite(link.mass)):
            raise CharacterFormatError(f"links[{i}].mass: must be positive")
        if not (link.inertia > 0 and math.isfinite(link.inertia)):
            raise CharacterFormatError(f"links[{i}].inertia: must be positive")
        if link.length < 0:
            raise CharacterFormatError(f"links[{i}].length: must be non-negative")
    for i, j in enumerate(model.joints):
        if not (j.torque_limit > 0 and math.isfinite(j.torque_limit)):
            raise CharacterFormatError(f"joints[{i}].torque_limit: must be positive and finite")
        if not j.limits[0] < j.limits[1]:
            raise CharacterFormatError(f"joints[{i}].limits: lower must be < upper")
        if j.parent == j.child:
            raise CharacterFormatError(f"joints[{i}]: tree violation, link joined to itself")
    parent_of = {}
    for i, j in enumerate(model.joints):
        if j.child in parent_of:
            raise CharacterFormatError(
                f"joints[{i}].child: tree violation, link {model.links[j.child].name!r} has two parents")
        parent_of[j.child] = j.parent
    if model.root in parent_of:
        raise CharacterFormatError("root: tree violation, root link has a parent joint")
    for i in range(len(model.links)):
        seen = set()
        k = i
        while k != model.root:
            if k in seen:
                raise CharacterFormatError(
                    f"links[{i}]: tree violation, cycle through {model.links[k].name!r}")
            seen.add(k)
            if k not in parent_of:
                raise CharacterFormatError(
                    f"links[{i}]: tree violation, {model.links[k].name!r} is not connected to the root")
            k = parent_of[k]


def _build_tables(model):
    nl, nj = len(model.links), len(model.joints)
    n = 3 + nj
    joint_of_child = {j.child: idx for idx, j in enumerate(model.joints)}

    def path_joints(i):
        out = []
        while i != model.root:
            ji = joint_of_child[i]
            out.append(ji)
            i = model.joints[ji].parent
        return out[::-1]

    frame_coef = np.zeros((nl, n))
    origin_chain = np.zeros((nl, nl, 2))
    for i in range(nl):
        frame_coef[i, 2] = 1.0
        for ji in path_joints(i):
            j = model.joints[ji]
            frame_coef[i, 3 + ji] = 1.0
            origin_chain[i, j.parent] += j.parent_anchor
            origin_chain[i, j.child] -= j.child_anchor
    com_chain = origin_chain.copy()
    for i, link in enumerate(model.links):
        com_chain[i, i] += link.com_offset

    points = [(c.link, c.offset) for c in model.contact_points]
    for i, link in enumerate(model.links):
        half = 0.5 * link.length
        if half <= 0:
            continue
        ax = (math.cos(link.axis_angle) * half, math.sin(link.axis_angle) * half)
        for s in (-1.0, 1.0):
            pt = (link.com_offset[0] + s * ax[0], link.com_offset[1] + s * ax[1])
            if not any(l == i and np.allclose(o, pt, atol=1e-9) for l, o in points):
                points.append((i, pt))
    contact_chain = np.zeros((len(points), nl, 2))
    for c, (link, offset) in enumerate(points):
        contact_chain[c] = origin_chain[link]
        contact_chain[c, link] += offset
    contact_link = np.array([p[0] for p in points], dtype=np.int64)
    trunk = set(model.trunk)
    contact_trunk = np.array([p[0] in trunk for p in points], dtype=np.bool_)
    return Kinematics(
        frame_coef=frame_coef, com_chain=com_chain, origin_chain=origin_chain,
        contact_chain=contact_chain, contact_link=contact_link, contact_trunk=contact_trunk,
        mass=np.array([l.mass for l in model.links]),
        inertia=np.array([l.inertia for l in model.links]),
        torque_limit=np.array([j.torque_limit for j in model.joints], dtype=np.float64),
        joint_lower=np.array([j.limits[0] for j in model.joints], dtype=np.float64),
        joint_upper=np.array([j.limits[1] for j in model.joints], dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# Kernels


@numba.njit(cache=True)
def _ground_at(x0, x1, h0, h1, x):
    """Height and slope of the ground at ``x``."""
    nseg = x0.shape[0]
    if x <= x0[0]:
        return h0[0], 0.0
    if x >= x1[nseg - 1]:
        return h1[nseg - 1], 0.0
    lo, hi = 0, nseg - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if x0[mid] <= x:
            lo = mid
        else:
            hi = mid - 1
    if x > x1[lo]:
        # gap between segments: hold the left segment's end height
        return h1[lo], 0.0
    slope = (h1[lo] - h0[lo]) / (x1[lo] - x0[lo])
    return h0[lo] + slope * (x - x0[lo]), slope


@numba.njit(cache=True)
def _frame_angles(coef, q):
    nl, n = coef.shape
    phi = np.zeros(nl)
    for i in range(nl):
        s = 0.0
        for k in range(2, n):
            s += coef[i, k] * q[k]
        phi[i] = s
    return phi


@numba.njit(cache=True)
def _point_pos(chain, phi, q):
    nl = chain.shape[0]
    px, py = q[0], q[1]
    for k in range(nl):
        vx, vy = chain[k, 0], chain[k, 1]
        if vx == 0.0 and vy == 0.0:
            continue
        c, s = math.cos(phi[k]), math.sin(phi[k])
        px += c * vx - s * vy
        py += s * vx + c * vy
    return px, py


@numba.njit(cache=True)
def _point_jac(chain, coef, phi, jac):
    """Fill ``jac`` (2, n) with d(point)/dq."""
    nl, n = coef.shape
    for d in range(n):
        jac[0, d] = 0.0
        jac[1, d] = 0.0
    jac[0, 0] = 1.0
    jac[1, 1] = 1.0
    for k in range(nl):
        vx, vy = chain[k, 0], chain[k, 1]
        if vx == 0.0 and vy == 0.0:
            continue
        c, s = math.cos(phi[k]), math.sin(phi[k])
        wx = c * vx - s * vy
        wy = s * vx + c * vy
        for d in range(2, n):
            a = coef[k, d]
            if a != 0.0:
                jac[0, d] -= a * wy
                jac[1, d] += a * wx


@numba.njit(cache=True)
def _kinetic_gradient(coef, com_chain, mass, phi, v):
    """dT/dq at fixed generalized velocity ``v``."""
    nl, n = coef.shape
    grad = np.zeros(n)
    jac = np.zeros((2, n))
    for i in range(nl):
        _point_jac(com_chain[i], coef, phi, jac)
        vx, vy = 0.0, 0.0
        for d in range(n):
            vx += jac[0, d] * v[d]
            vy += jac[1, d] * v[d]
        for k in range(nl):
            cx, cy = com_chain[i, k, 0], com_chain[i, k, 1]
            if cx == 0.0 and cy == 0.0:
                continue
            c, s = math.cos(phi[k]), math.sin(phi[k])
            om = 0.0
            for d in range(2, n):
                om += coef[k, d] * v[d]
            dot = vx * (c * cx - s * cy) + vy * (s * cx + c * cy)
            for a in range(2, n):
                if coef[k, a] != 0.0:
                    grad[a] -= mass[i] * om * coef[k, a] * dot
    return grad


@numba.njit(cache=True)
def _link_kinematics(coef, com_chain, q, qd):
    """World COM positions and velocities of every link."""
    nl, n = coef.shape
    phi = _frame_angles(coef, q)
    pos = np.zeros((nl, 2))
    vel = np.zeros((nl, 2))
    jac = np.zeros((2, n))
    for i in range(nl):
        px, py = _point_pos(com_chain[i], phi, q)
        pos[i, 0] = px
        pos[i, 1] = py
        _point_jac(com_chain[i], coef, phi, jac)
        for d in range(n):
            vel[i, 0] += jac[0, d] * qd[d]
            vel[i, 1] += jac[1, d] * qd[d]
    return pos, vel


@numba.njit(cache=True)
def _mass_matrix(coef, com_chain, mass, inertia, q):
    nl, n = coef.shape
    phi = _frame_angles(coef, q)
    M = np.zeros((n, n))
    jac = np.zeros((2, n))
    for i in range(nl):
        _point_jac(com_chain[i], coef, phi, jac)
        for a in range(n):
            for b in range(n):
                M[a, b] += mass[i] * (jac[0, a] * jac[0, b] + jac[1, a] * jac[1, b]) \
                    + inertia[i] * coef[i, a] * coef[i, b]
    return M


@numba.njit(cache=True)
def _substep(coef, com_chain, contact_chain, contact_trunk, mass, inertia, tau_limit,
             fixed_root, gravity, q, qd, tau, damp, ext_force, jlo, jhi, k_lim, d_lim,
             gx0, gx1, gh0, gh1, k_n, c_n, mu, v_reg, dt):
    """One semi-implicit (symplectic) Euler substep in momentum form.

    The carried momentum is ``M(q - dt qd) qd``; the velocity-dependent
    kinetic term is evaluated at the new velocity by two fixed-point passes.
    Joint ``j`` receives ``tau[j] - damp[j] * qd_new[j]`` with the damping
    treated implicitly; a joint whose resulting torque exceeds its limit is
    re-solved with the clamped torque.

    Returns (q_new, qd_new, applied_tau, trunk_contact, status) where status
    0 is success, 1 means non-finite generalized velocity.
    """
    nl, n = coef.shape
    nj = n - 3
    phi = _frame_angles(coef, q)

    M = np.zeros((n, n))
    f = np.zeros(n)
    jac = np.zeros((2, n))
    for i in range(nl):
        _point_jac(com_chain[i], coef, phi, jac)
        fx = ext_force[i, 0]
        fy = -mass[i] * gravity + ext_force[i, 1]
        for a in range(n):
            f[a] += jac[0, a] * fx + jac[1, a] * fy
            for b in range(n):
                M[a, b] += mass[i] * (jac[0, a] * jac[0, b] + jac[1, a] * jac[1, b]) \
                    + inertia[i] * coef[i, a] * coef[i, b]
    p_prev = _mass_matrix(coef, com_chain, mass, inertia, q - dt * qd) @ qd

    # implicit contact damping: (M + dt J^T D J) qd' = M qd + dt (f + J^T F)
    A = M.copy()
    trunk_contact = False
    nc = contact_chain.shape[0]
    for c in range(nc):
        px, py = _point_pos(contact_chain[c], phi, q)
        h, slope = _ground_at(gx0, gx1, gh0, gh1, px)
        inv = 1.0 / math.sqrt(1.0 + slope * slope)
        depth = (h - py) * inv
        if depth <= 0.0:
            continue
        nx, ny = -slope * inv, inv
        tx, ty = inv, slope * inv
        _point_jac(contact_chain[c], coef, phi, jac)
        vx, vy = 0.0, 0.0
        for d in range(n):
            vx += jac[0, d] * qd[d]
            vy += jac[1, d] * qd[d]
        vn = vx * nx + vy * ny
        vt = vx * tx + vy * ty
        fn_now = k_n * depth - c_n * vn
        if fn_now <= 0.0:
            continue
        if contact_trunk[c]:
            trunk_contact = True
        # explicit spring, implicit normal damping
        fe_n = k_n * depth
        d_n = c_n
        if abs(vt) < v_reg:
            fe_t = 0.0
            d_t = mu * fn_now / v_reg
        else:
            fe_t = -mu * fn_now * (1.0 if vt > 0 else -1.0)
            d_t = 0.0
        fex = fe_n * nx + fe_t * tx
        fey = fe_n * ny + fe_t * ty
        for a in range(n):
            f[a] += jac[0, a] * fex + jac[1, a] * fey
            jna = jac[0, a] * nx + jac[1, a] * ny
            jta = jac[0, a] * tx + jac[1, a] * ty
            for b in range(n):
                jnb = jac[0, b] * nx + jac[1, b] * ny
                jtb = jac[0, b] * tx + jac[1, b] * ty
                A[a, b] += dt * (d_n * jna * jnb + d_t * jta * jtb)

    # passive joint stops: explicit spring, implicit damping
    for j in range(nj):
        qj = q[3 + j]
        if qj < jlo[j]:
            f[3 + j] += k_lim * (jlo[j] - qj)
            A[3 + j, 3 + j] += dt * d_lim
        elif qj > jhi[j]:
            f[3 + j] += k_lim * (jhi[j] - qj)
            A[3 + j, 3 + j] += dt * d_lim

    qd_new = qd.copy()
    saturated = np.zeros(nj, dtype=np.bool_)
    applied = np.zeros(nj)
    for _pass in range(2):
        rhs0 = p_prev + dt * (f + _kinetic_gradient(coef, com_chain, mass, phi, qd_new))
        _solve_saturated(A, rhs0, tau, damp, tau_limit, fixed_root, dt, saturated, applied, qd_new)
    status = 0
    for d in range(n):
        if not math.isfinite(qd_new[d]):
            status = 1
    q_new = q + dt * qd_new
    return q_new, qd_new, applied, trunk_contact, status


@numba.njit(cache=True)
def _solve_saturated(A, rhs0, tau, damp, tau_limit, fixed_root, dt, saturated, applied, qd_new):
    """Solve for the new velocity; joints whose implicitly damped torque
    exceeds the limit are re-solved with the clamped torque."""
    n = A.shape[0]
    nj = n - 3
    # joints with no implicit damping get their clamped torque up front
    for j in range(nj):
        saturated[j] = damp[j] == 0.0
        if saturated[j]:
            applied[j] = min(max(tau[j], -tau_limit[j]), tau_limit[j])
    for _ in range(nj + 1):
        A2 = A.copy()
        rhs = rhs0.copy()
        for j in range(nj):
            if saturated[j]:
                rhs[3 + j] += dt * applied[j]
            else:
                rhs[3 + j] += dt * tau[j]
                A2[3 + j, 3 + j] += dt * damp[j]
        if fixed_root:
            sol = np.linalg.solve(np.ascontiguousarray(A2[3:, 3:]), rhs[3:])
            qd_new[:3] = 0.0
            for j in range(nj):
                qd_new[3 + j] = sol[j]
        else:
            qd_new[:] = np.linalg.solve(A2, rhs)
        changed = False
        for j in range(nj):
            if saturated[j]:
                continue
            t = tau[j] - damp[j] * qd_new[3 + j]
            if t > tau_limit[j] or t < -tau_limit[j]:
                saturated[j] = True
                applied[j] = min(max(t, -tau_limit[j]), tau_limit[j])
                changed = True
            else:
                applied[j] = t
        if not changed:
            break


# ---------------------------------------------------------------------------
# Public API


def _check_q(model, q, name="q"):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (model.ndof,):
        raise ValueError(f"{name} has shape {q.shape}, expected ({model.ndof},)")
    return q


@dataclass(frozen=True)
class LinkPoses:
    origins: np.ndarray  # (L, 2) link frame origins
    angles: np.ndarray  # (L,) world orientation
    coms: np.ndarray  # (L, 2)


def forward_kinematics(model, q):
    q = _check_q(model, q)
    kin = model.kin
    phi = _frame_angles(kin.frame_coef, q)
    origins = np.array([_point_pos(kin.origin_chain[i], phi, q) for i in range(model.n_links)])
    coms = np.array([_point_pos(kin.com_chain[i], phi, q) for i in range(model.n_links)])
    return LinkPoses(origins=origins, angles=phi, coms=coms)


def contact_positions(model, q):
    q = _check_q(model, q)
    kin = model.kin
    phi = _frame_angles(kin.frame_coef, q)
    return np.array([_point_pos(kin.contact_chain[c], phi, q)
                     for c in range(kin.contact_chain.shape[0])]).reshape(-1, 2)


def com_state(model, q, qd, ground=None):
    """Per-link COM velocities, whole-body COM velocity and root height."""
    q = _check_q(model, q)
    qd = _check_q(model, qd, "qd")
    kin = model.kin
    phi = _frame_angles(kin.frame_coef, q)
    jac = np.zeros((2, model.ndof))
    vel = np.zeros((model.n_links, 2))
    for i in range(model.n_links):
        _point_jac(kin.com_chain[i], kin.frame_coef, phi, jac)
        vel[i] = jac @ qd
    com_vel = kin.mass @ vel / kin.mass.sum()
    ground = ground or Ground.flat(0.0)
    h_root = q[1] - ground.height(q[0])
    return vel, com_vel, float(h_root)


def mass_matrix(model, q):
    q = _check_q(model, q)
    kin = model.kin
    return _mass_matrix(kin.frame_coef, kin.com_chain, kin.mass, kin.inertia, q)


def step(model, state, joint_torques, external_forces=None, dt=1.0 / 600.0,
         contact=None, ground=None, gravity=GRAVITY, joint_damping=None):
    """Advance ``state`` by one substep of length ``dt``.

    ``external_forces`` maps link names (or indices) to world-frame forces
    applied at the link COM, or is an ``(L, 2)`` array.  ``joint_damping``
    adds ``-d * qd`` to each joint torque, integrated implicitly.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    tau = np.asarray(joint_torques, dtype=np.float64).reshape(-1)
    if tau.shape != (model.n_joints,):
        raise ValueError(f"expected {model.n_joints} joint torques, got {tau.shape[0]}")
    if not np.all(np.isfinite(tau)):
        raise ValueError("joint torques must be finite")
    _check_q(model, state.q)
    ext = external_force_array(model, external_forces)
    damp = np.zeros(model.n_joints) if joint_damping is None else \
        np.broadcast_to(np.asarray(joint_damping, dtype=np.float64), (model.n_joints,)).copy()
    if np.any(damp < 0):
        raise ValueError("joint damping must be non-negative")
    contact = contact or ContactConfig()
    ground = ground or Ground.flat(contact.ground_height)
    kin = model.kin
    q, qd, _, trunk, status = _substep(
        kin.frame_coef, kin.com_chain, kin.contact_chain, kin.contact_trunk,
        kin.mass, kin.inertia, kin.torque_limit, model.fixed_root, float(gravity),
        state.q, state.qd, tau, damp, ext, kin.joint_lower, kin.joint_upper,
        model.limit_stiffness, model.limit_damping, ground.x0, ground.x1, ground.h0, ground.h1,
        contact.stiffness, contact.damping, contact.friction, contact.friction_velocity, dt)
    if status != 0 or not np.all(np.isfinite(q)):
        raise IntegrationError("qd", qd)
    timer = state.trunk_timer + dt if trunk else 0.0
    return DynamicsState(q=q, qd=qd, time=state.time + dt, l_ce=state.l_ce, trunk_timer=timer)


def applied_torques(model, joint_torques):
    lim = model.kin.torque_limit
    return np.clip(np.asarray(joint_torques, dtype=np.float64), -lim, lim)


def external_force_array(model, external_forces):
    ext = np.zeros((model.n_links, 2))
    if external_forces is None:
        return ext
    if isinstance(external_forces, dict):
        for key, force in external_forces.items():
            idx = model.link_index(key) if isinstance(key, str) else int(key)
            ext[idx] += np.asarray(force, dtype=np.float64)
        return ext
    arr = np.asarray(external_forces, dtype=np.float64)
    if arr.shape != ext.shape:
        raise ValueError(f"external forces must have shape {ext.shape}")
    return arr.copy()


def mechanical_energy(model, q, qd, gravity=GRAVITY):
    q = _check_q(model, q)
    qd = _check_q(model, qd, "qd")
    kinetic = 0.5 * qd @ mass_matrix(model, q) @ qd
    potential = gravity * model.kin.mass @ forward_kinematics(model, q).coms[:, 1]
    return float(kinetic + potential)


def linear_momentum(model, q, qd):
    vel, _, _ = com_state(model, q, qd)
    return model.kin.mass @ vel
