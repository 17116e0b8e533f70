"""Imitation environment: one policy query per control step, several
simulation substeps per control step."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import actuation as act
from .rigid2d import ContactConfig, DynamicsState, Ground, GRAVITY, _substep
from .task import (FALL_END, RUNNING, TIMER_END, RewardWeights, _features, _reward,
                   draw_episode_duration, feature_dim, sample_initial_state, sample_reference)

SIM_RATE = 600
MAX_SPEED = 1e3  # generalized speeds beyond this count as a blow-up


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def substeps_for_rate(rate, sim_rate=SIM_RATE):
    """Substeps per control step; the query rate must divide the sim rate."""
    if rate <= 0 or sim_rate % rate != 0:
        raise ConfigError(f"query rate {rate} Hz does not divide the {sim_rate} Hz simulation rate")
    return sim_rate // rate


@numba.njit(cache=True)
def _control_step(kind, action, q, qd, l_ce, timer, nsub, dt, ext_force, ext_link,
                  lower, upper, kp, kd, tau_lim, span_joint, span_r0, span_qmax, span_qrest,
                  l_opt, l_ser, f0, penn, mc,
                  coef, com_chain, contact_chain, contact_trunk, mass, inertia, fixed_root,
                  jlo, jhi, k_lim, d_lim, gravity, gx0, gx1, gh0, gh1, k_n, c_n, mu, v_reg):
    nl = coef.shape[0]
    nj = tau_lim.shape[0]
    nu = span_joint.shape[0]
    taus = np.zeros((nsub, nj))
    fmtu = np.zeros((nsub, nu))
    ext = np.zeros((nl, 2))
    status = 0
    for k in range(nsub):
        tau, damp, l_ce, f = act._drive(kind, action, q, qd, l_ce, dt, lower, upper, kp, kd,
                                        tau_lim, span_joint, span_r0, span_qmax, span_qrest,
                                        l_opt, l_ser, f0, penn, mc)
        for j in range(nj):
            if not np.isfinite(tau[j]):
                status = 2
        if status != 0:
            break
        if ext_link >= 0:
            ext[ext_link, 0] = ext_force[k, 0]
            ext[ext_link, 1] = ext_force[k, 1]
        q_new, qd_new, applied, trunk, st = _substep(
            coef, com_chain, contact_chain, contact_trunk, mass, inertia, tau_lim, fixed_root,
            gravity, q, qd, tau, damp, ext, jlo, jhi, k_lim, d_lim, gx0, gx1, gh0, gh1, k_n, c_n, mu, v_reg, dt)
        if st != 0:
            status = 1
            break
        for d in range(qd_new.shape[0]):
            if abs(qd_new[d]) > MAX_SPEED:
                status = 1
        if status != 0:
            break
        q, qd = q_new, qd_new
        taus[k] = applied
        fmtu[k] = f
        timer = timer + dt if trunk else 0.0
    return q, qd, l_ce, timer, taus, fmtu, status


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    status: str
    torques: np.ndarray  # (substeps, joints) applied torques
    mtu_forces: np.ndarray  # (substeps, units)


class ImitationEnv:
    """Character + actuation + reference motion.

    ``state_variant`` is ``"target"`` (reference features appended) or
    ``"phase"`` (a scalar motion phase appended).
    """

    def __init__(self, character, motion, actuation, state_variant="target", control_rate=60,
                 contact=None, ground=None, gravity=GRAVITY, fall_threshold=0.5,
                 mean_episode_duration=2.0, weights=None, sim_rate=SIM_RATE):
        if motion.ndof != character.ndof:
            raise ConfigError(f"motion has {motion.ndof} coordinates, character needs {character.ndof}")
        if len(actuation.torque_limit) != character.n_joints:
            raise ConfigError("actuation model does not match the character's joints")
        if state_variant not in ("target", "phase"):
            raise ConfigError(f"unknown state variant {state_variant!r}")
        self.character = character
        self.motion = motion
        self.actuation = actuation
        self.state_variant = state_variant
        self.control_rate = control_rate
        self.sim_rate = sim_rate
        self.nsub = substeps_for_rate(control_rate, sim_rate)
        self.dt = 1.0 / sim_rate
        self.control_dt = 1.0 / control_rate
        self.contact = contact or ContactConfig()
        self.ground = ground or Ground.flat(self.contact.ground_height)
        self.gravity = float(gravity)
        self.fall_threshold = fall_threshold
        self.mean_episode_duration = mean_episode_duration
        self.weights = weights or RewardWeights()
        self._wdiag = self.weights.diag(character.n_joints)
        self._warr = self.weights.as_array()
        self._effectors = np.array(character.end_effectors, dtype=np.int64)
        self._act_args = act.kernel_args(actuation)
        self._kind = act.KIND_CODE[actuation.kind]
        self.state = None
        self.phase0 = 0.0
        self.elapsed = 0.0
        self.duration = np.inf

    # -- dimensions ---------------------------------------------------------

    @property
    def feature_dim(self):
        return feature_dim(self.character)

    @property
    def state_dim(self):
        target = self.feature_dim if self.state_variant == "target" else 1
        return self.feature_dim + target + self.actuation.n_units

    @property
    def action_dim(self):
        return self.actuation.action_dim

    @property
    def action_bounds(self):
        return self.actuation.lower, self.actuation.upper

    @property
    def steps_per_second(self):
        return self.control_rate

    def with_actuation(self, actuation):
        env = ImitationEnv(self.character, self.motion, actuation, self.state_variant,
                           self.control_rate, self.contact, self.ground, self.gravity,
                           self.fall_threshold, self.mean_episode_duration, self.weights,
                           self.sim_rate)
        return env

    def with_ground(self, ground):
        env = self.with_actuation(self.actuation)
        env.ground = ground
        return env

    # -- episodes -----------------------------------------------------------

    def reset(self, rng, duration=None):
        """Start an episode from the initial-state distribution.

        ``duration`` defaults to an exponential draw; pass ``np.inf`` for
        fixed-length evaluation episodes.
        """
        self.state, self.phase0 = sample_initial_state(self.motion, rng, self.control_dt,
                                                       self.actuation)
        self.elapsed = 0.0
        self.duration = draw_episode_duration(rng, self.mean_episode_duration) \
            if duration is None else duration
        return self.observation()

    def set_state(self, state, phase_time, elapsed=0.0, duration=np.inf):
        self.state = state
        self.phase0 = phase_time
        self.elapsed = elapsed
        self.duration = duration

    def reference(self, elapsed=None):
        t = self.phase0 + (self.elapsed if elapsed is None else elapsed)
        return sample_reference(self.motion, t, self.control_dt)

    def observation(self):
        kin = self.character.kin
        s = self.state
        out = np.empty(self.state_dim)
        nf = self.feature_dim
        _features(kin.frame_coef, kin.com_chain, s.q, s.qd, self._root_height(s.q), out[:nf])
        if self.state_variant == "target":
            q_ref, qd_ref = self.reference()
            _features(kin.frame_coef, kin.com_chain, q_ref, qd_ref, float(q_ref[1]), out[nf:2 * nf])
            off = 2 * nf
        else:
            out[nf] = self.phase()
            off = nf + 1
        out[off:] = s.l_ce
        return out

    def phase(self):
        span = self.motion.cycle_duration
        t = self.phase0 + self.elapsed - self.motion.times[0]
        return float((t / span) % 1.0)

    def _root_height(self, q):
        if len(self.ground.x0) == 1:
            return float(q[1] - self.ground.h0[0])
        return float(q[1] - self.ground.height(q[0]))

    def reward(self):
        kin = self.character.kin
        s = self.state
        q_ref, qd_ref = self.reference()
        return float(_reward(kin.frame_coef, kin.com_chain, kin.mass, self._effectors, s.q, s.qd,
                             self._root_height(s.q), q_ref, qd_ref, float(q_ref[1]),
                             self._wdiag, self._warr))

    def step(self, action, ext_force=None, ext_link=-1):
        """Apply ``action`` for one control step.

        ``ext_force`` is an optional ``(substeps, 2)`` world-frame force applied
        at the COM of link ``ext_link``.  A simulation blow-up ends the
        episode as a fall with zero reward.
        """
        action = np.asarray(action, dtype=np.float64)
        if ext_force is None:
            ext_force = np.zeros((self.nsub, 2))
            ext_link = -1
        s = self.state
        kin = self.character.kin
        g, c = self.ground, self.contact
        q, qd, l_ce, timer, taus, fmtu, status = _control_step(
            self._kind, action, s.q, s.qd, s.l_ce, s.trunk_timer, self.nsub, self.dt,
            np.ascontiguousarray(ext_force, dtype=np.float64), int(ext_link), *self._act_args,
            kin.frame_coef, kin.com_chain, kin.contact_chain, kin.contact_trunk, kin.mass,
            kin.inertia, self.character.fixed_root, kin.joint_lower, kin.joint_upper,
            self.character.limit_stiffness, self.character.limit_damping, self.gravity, g.x0, g.x1, g.h0, g.h1,
            c.stiffness, c.damping, c.friction, c.friction_velocity)
        self.elapsed += self.control_dt
        if status != 0 or not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            return StepResult(self.observation(), 0.0, FALL_END, taus, fmtu)
        self.state = DynamicsState(q=q, qd=qd, time=s.time + self.control_dt, l_ce=l_ce,
                                   trunk_timer=timer)
        r = self.reward()
        if timer > self.fall_threshold:
            status_name = FALL_END
        elif self.elapsed >= self.duration - 1e-9:
            status_name = TIMER_END
        else:
            status_name = RUNNING
        return StepResult(self.observation(), r, status_name, taus, fmtu)


def bundled_env(actuation="pd", motion="biped_walk.json", character="biped7.json", **kwargs):
    """Environment from bundled (or given) character, motion and actuation files.

    ``actuation`` is a kind name, resolved to ``<character stem>_<kind>.json``,
    or a file path.
    """
    from pathlib import Path

    from .actuation import KINDS, load_actuation
    from .rigid2d import load_character
    from .task import load_motion

    ch = load_character(character)
    path = f"{Path(character).stem}_{actuation}.json" if actuation in KINDS else actuation
    return ImitationEnv(ch, load_motion(motion), load_actuation(path, ch), **kwargs)
