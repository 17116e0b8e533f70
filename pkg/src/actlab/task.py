"""Motion-imitation task: reference motions, state features, reward,
initial-state distribution and episode termination."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .rigid2d import CharacterFormatError, _link_kinematics, parse_json_text, resolve_data_path

RUNNING, TIMER_END, FALL_END = "running", "timer_end", "fall_end"


@dataclass(frozen=True, eq=False)
class ReferenceMotion:
    times: np.ndarray  # (K,)
    poses: np.ndarray  # (K, n)
    cycle_duration: float
    cyclic: bool = True
    root_displacement: float = 0.0
    name: str = ""

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64).reshape(-1)
        poses = np.array(self.poses, dtype=np.float64)
        if poses.ndim != 2 or poses.shape[0] != len(times) or len(times) == 0:
            raise ValueError("need one pose per keyframe time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("keyframe times must be strictly increasing")
        if not self.cycle_duration > 0:
            raise ValueError("cycle duration must be positive")
        if self.cyclic and times[-1] >= self.cycle_duration + times[0]:
            raise ValueError("cyclic keyframes must lie within one cycle")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "poses", poses)

    @property
    def ndof(self):
        return self.poses.shape[1]


@dataclass(frozen=True)
class RewardWeights:
    pose: float = 0.5
    vel: float = 0.05
    end: float = 0.15
    root: float = 0.1
    com: float = 0.2
    end_scale: float = 40.0
    root_scale: float = 10.0
    com_scale: float = 10.0
    joint_weights: tuple[float, ...] | None = None  # root orientation + joints

    def __post_init__(self):
        w = self.as_array()[:5]
        if np.any(w < 0):
            raise ValueError("reward weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"reward weights must sum to 1, got {w.sum()}")

    def as_array(self):
        return np.array([self.pose, self.vel, self.end, self.root, self.com,
                         self.end_scale, self.root_scale, self.com_scale])

    def diag(self, n_joints):
        if self.joint_weights is None:
            return np.ones(n_joints + 1)
        w = np.asarray(self.joint_weights, dtype=np.float64)
        if w.shape != (n_joints + 1,):
            raise ValueError(f"joint weights need {n_joints + 1} entries")
        return w


# ---------------------------------------------------------------------------
# Reference motion


def motion_from_dict(doc, source="<dict>"):
    try:
        frames = doc["frames"]
        times = [float(f["t"]) for f in frames]
        poses = [[float(v) for v in f["q"]] for f in frames]
        return ReferenceMotion(
            times=times, poses=poses,
            cycle_duration=float(doc.get("cycle_duration", times[-1] if times[-1] > 0 else 1.0)),
            cyclic=bool(doc.get("cyclic", True)),
            root_displacement=float(doc.get("root_cycle_displacement", 0.0)),
            name=str(doc.get("name", "")),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise CharacterFormatError(f"{source}: malformed motion document ({exc})") from None
    except ValueError as exc:
        raise CharacterFormatError(f"{source}: {exc}") from None


def load_motion(source):
    if isinstance(source, str) and source.lstrip().startswith("{"):
        return motion_from_dict(parse_json_text(source))
    path = resolve_data_path(source)
    return motion_from_dict(parse_json_text(path.read_text(), str(path)), str(path))


def motion_to_dict(motion):
    return {
        "name": motion.name, "cyclic": motion.cyclic, "cycle_duration": motion.cycle_duration,
        "root_cycle_displacement": motion.root_displacement,
        "frames": [{"t": float(t), "q": p.tolist()} for t, p in zip(motion.times, motion.poses)],
    }


def reference_pose(motion, t):
    """Keyframe-interpolated pose at time ``t``."""
    times, poses = motion.times, motion.poses
    if not motion.cyclic:
        t = min(max(t, times[0]), times[-1])
        return _interp(times, poses, t)
    period = motion.cycle_duration
    k = math.floor((t - times[0]) / period)
    tau = t - k * period
    if tau >= times[-1]:
        # wrap segment: last keyframe to the first keyframe of the next cycle
        nxt = poses[0].copy()
        nxt[0] += motion.root_displacement
        span = times[0] + period - times[-1]
        w = (tau - times[-1]) / span
        pose = (1 - w) * poses[-1] + w * nxt
    else:
        pose = _interp(times, poses, tau)
    pose[0] += k * motion.root_displacement
    return pose


def _interp(times, poses, t):
    if len(times) == 1:
        return poses[0].copy()
    i = int(np.searchsorted(times, t, side="right")) - 1
    i = min(max(i, 0), len(times) - 2)
    w = (t - times[i]) / (times[i + 1] - times[i])
    return (1 - w) * poses[i] + w * poses[i + 1]


def sample_reference(motion, t, dt=1.0 / 60.0):
    """Reference pose and finite-difference velocity at time ``t``."""
    q0 = reference_pose(motion, t)
    q1 = reference_pose(motion, t + dt)
    return q0, (q1 - q0) / dt


def motion_span(motion):
    """Length of the phase interval initial states are drawn from."""
    if motion.cyclic:
        return motion.cycle_duration
    return float(motion.times[-1] - motion.times[0])


# ---------------------------------------------------------------------------
# Features and reward


@numba.njit(cache=True)
def _features(coef, com_chain, q, qd, h_root, out):
    pos, vel = _link_kinematics(coef, com_chain, q, qd)
    nl = pos.shape[0]
    out[0] = h_root
    for i in range(nl):
        out[1 + 2 * i] = pos[i, 0] - q[0]
        out[2 + 2 * i] = pos[i, 1] - q[1]
        out[1 + 2 * nl + 2 * i] = vel[i, 0]
        out[2 + 2 * nl + 2 * i] = vel[i, 1]


@numba.njit(cache=True)
def _reward(coef, com_chain, mass, effectors, q, qd, h_root, q_ref, qd_ref, h_ref, wdiag, w):
    n = q.shape[0]
    pose_err = 0.0
    vel_err = 0.0
    for d in range(2, n):
        e = q_ref[d] - q[d]
        pose_err += wdiag[d - 2] * e * e
        e = qd_ref[d] - qd[d]
        vel_err += wdiag[d - 2] * e * e
    pos, vel = _link_kinematics(coef, com_chain, q, qd)
    pos_r, vel_r = _link_kinematics(coef, com_chain, q_ref, qd_ref)
    end_err = 0.0
    for e in effectors:
        dx = (pos_r[e, 0] - q_ref[0]) - (pos[e, 0] - q[0])
        dy = (pos_r[e, 1] - q_ref[1]) - (pos[e, 1] - q[1])
        end_err += dx * dx + dy * dy
    mtot = 0.0
    cx, cy, crx, cry = 0.0, 0.0, 0.0, 0.0
    for i in range(mass.shape[0]):
        mtot += mass[i]
        cx += mass[i] * vel[i, 0]
        cy += mass[i] * vel[i, 1]
        crx += mass[i] * vel_r[i, 0]
        cry += mass[i] * vel_r[i, 1]
    dvx = (crx - cx) / mtot
    dvy = (cry - cy) / mtot
    dh = h_ref - h_root
    r_pose = math.exp(-pose_err)
    r_vel = math.exp(-vel_err)
    r_end = math.exp(-w[5] * end_err)
    r_root = math.exp(-w[6] * dh * dh)
    r_com = math.exp(-w[7] * (dvx * dvx + dvy * dvy))
    return w[0] * r_pose + w[1] * r_vel + w[2] * r_end + w[3] * r_root + w[4] * r_com


def _root_height(q, ground):
    if ground is None:
        return float(q[1])
    return float(q[1] - ground.height(q[0]))


def featurize(model, q, qd, ground=None):
    """Root height, link COM positions relative to the root, link COM velocities."""
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    if q.shape != (model.ndof,) or qd.shape != (model.ndof,):
        raise ValueError(f"pose and velocity must have length {model.ndof}")
    out = np.empty(feature_dim(model))
    _features(model.kin.frame_coef, model.kin.com_chain, q, qd, _root_height(q, ground), out)
    return out


def feature_dim(model):
    return 1 + 4 * model.n_links


def reward(model, q, qd, q_ref, qd_ref, weights=None, ground=None):
    """Imitation reward in (0, 1]; the reference is measured over flat ground."""
    weights = weights or RewardWeights()
    arrs = [np.asarray(a, dtype=np.float64) for a in (q, qd, q_ref, qd_ref)]
    if any(a.shape != (model.ndof,) for a in arrs):
        raise ValueError(f"all poses and velocities must have length {model.ndof}")
    q, qd, q_ref, qd_ref = arrs
    kin = model.kin
    return float(_reward(kin.frame_coef, kin.com_chain, kin.mass,
                         np.array(model.end_effectors, dtype=np.int64), q, qd,
                         _root_height(q, ground), q_ref, qd_ref, float(q_ref[1]),
                         weights.diag(model.n_joints), weights.as_array()))


# ---------------------------------------------------------------------------
# Episodes


def sample_initial_state(motion, rng, dt=1.0 / 60.0, actuation=None):
    """Draw a phase uniformly along the reference and the matching state.

    Returns ``(DynamicsState, phase_time)``.  Muscle CE lengths start in
    passive equilibrium at the sampled pose.
    """
    from .actuation import passive_lengths
    from .rigid2d import DynamicsState

    t0 = motion.times[0] + rng.uniform(0.0, motion_span(motion)) if motion_span(motion) > 0 \
        else motion.times[0]
    q, qd = sample_reference(motion, t0, dt)
    l_ce = passive_lengths(actuation, q) if actuation is not None else np.zeros(0)
    return DynamicsState(q=q, qd=qd, time=0.0, l_ce=l_ce), float(t0)


def draw_episode_duration(rng, mean=2.0):
    return float(rng.exponential(mean))


def episode_status(state, elapsed, duration, fall_threshold=0.5):
    if state.trunk_timer > fall_threshold:
        return FALL_END
    if elapsed >= duration:
        return TIMER_END
    return RUNNING

