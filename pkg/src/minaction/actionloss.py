"""Loss components of the triple-action objective.

The five components are

* ``traj``  - teacher-forced short rollouts against the next observation,
* ``accel`` - model force against wide-stencil accelerations,
* ``sym``   - variance of the energy along the teacher-forced substeps,
* ``comp``  - mean ``|A_i theta_i|``,
* ``arch``  - gate entropy,

combined as ``alpha_I (traj + l_accel accel) + alpha_E (sym + l_comp comp + l_arch arch)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dual as dn
from .forcebasis import R_MIN, BasisModel, entropy, radial_force, radial_potential
from .orbitgen import ForceLawSpec, Trajectory
from .stencil import StencilConfig, wide_accel, wide_velocity

TEACHER_MODES = ("clean", "stencil")
ENERGY_FORMS = ("model", "true_potential")


class TrainingInstabilityError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_accel: float = 1.0
    lambda_comp: float = 0.01
    lambda_arch: float = 0.5
    # None: the energy-variance term shares alpha_E
    alpha_S: float | None = None


@dataclass
class LossBreakdown:
    traj: float
    accel: float
    sym: float
    comp: float
    arch: float
    total: float
    alpha_I: float
    alpha_E: float
    alpha_S: float
    weights: LossWeights
    clamp_events: int = 0

    def reconstruct(self) -> float:
        w = self.weights
        return (self.alpha_I * (self.traj + w.lambda_accel * self.accel)
                + self.alpha_E * (w.lambda_comp * self.comp + w.lambda_arch * self.arch)
                + self.alpha_S * self.sym)


@dataclass
class PreparedTrajectory:
    """Per-trajectory arrays reused every epoch."""

    starts: np.ndarray       # teacher-forcing start positions r_k
    start_vel: np.ndarray    # velocities at r_k
    targets: np.ndarray      # observed r_{k+1}
    stencil_pos: np.ndarray  # r_j at stencil midpoints
    accel_hat: np.ndarray    # wide-stencil accelerations at those midpoints
    dt_obs: float


def prepare(traj: Trajectory, stride: int = 10, teacher_mode: str = "clean") -> PreparedTrajectory:
    if teacher_mode not in TEACHER_MODES:
        raise ValueError(f"teacher mode must be one of {TEACHER_MODES}")
    cfg = StencilConfig(stride, traj.dt)
    pos = traj.positions
    n = len(pos)
    if teacher_mode == "clean":
        ks = np.arange(n - 1)
        vel = traj.velocities[ks]
    else:
        ks = np.arange(stride, min(n - stride, n - 1))
        vel = wide_velocity(pos, cfg)[: len(ks)]
    return PreparedTrajectory(
        starts=pos[ks], start_vel=vel, targets=pos[ks + 1],
        stencil_pos=pos[stride:n - stride], accel_hat=wide_accel(pos, cfg), dt_obs=traj.dt)


def _sqnorm(d):
    return (d * d).sum(axis=-1)


def teacher_rollout(model: BasisModel, prep: PreparedTrajectory, substeps: int = 5,
                    coeffs=None):
    """Advance every observed state ``substeps`` Verlet steps of ``dt_obs/substeps``.

    Returns ``(final positions, [(r, v) after each substep], clamp events)``.
    ``coeffs`` overrides the model's effective coefficients ``A*theta``.
    """
    h = prep.dt_obs / substeps
    if coeffs is None:
        coeffs = model.coefficients()
    r, v = prep.starts, prep.start_vel
    acc = radial_force(coeffs, model.library, r, clamp=True)
    clamps = 0
    states = []
    for _ in range(substeps):
        v = v + acc * (0.5 * h)
        r = r + v * h
        rv = dn.value(r)
        clamps += int(np.count_nonzero(np.hypot(rv[:, 0], rv[:, 1]) < R_MIN))
        acc = radial_force(coeffs, model.library, r, clamp=True)
        v = v + acc * (0.5 * h)
        states.append((r, v))
    return r, states, clamps


def loss_traj_from_rollout(final, prep: PreparedTrajectory):
    return _sqnorm(final - prep.targets).mean()


def loss_traj(model: BasisModel, traj, substeps: int = 5, teacher_mode: str = "clean",
              stride: int = 10):
    prep = traj if isinstance(traj, PreparedTrajectory) else prepare(traj, stride, teacher_mode)
    final, _, _ = teacher_rollout(model, prep, substeps)
    return loss_traj_from_rollout(final, prep)


def loss_accel(model: BasisModel, traj, stride: int = 10, coeffs=None):
    prep = traj if isinstance(traj, PreparedTrajectory) else prepare(traj, stride)
    if coeffs is None:
        coeffs = model.coefficients()
    f = radial_force(coeffs, model.library, prep.stencil_pos, clamp=True)
    return _sqnorm(f - prep.accel_hat).mean()


def energy(model: BasisModel, pos, vel, energy_form: str = "model",
           true_law: ForceLawSpec | None = None, coeffs=None):
    kinetic = _sqnorm(vel) * 0.5
    if energy_form == "model":
        if coeffs is None:
            coeffs = model.coefficients()
        return kinetic + radial_potential(coeffs, model.library, pos)
    if energy_form == "true_potential":
        law = true_law or ForceLawSpec()
        x, y = pos[..., 0], pos[..., 1]
        return kinetic + law.potential(dn.clamp_min(dn.sqrt(x * x + y * y), R_MIN))
    raise ValueError(f"energy form must be one of {ENERGY_FORMS}")


def population_variance(values):
    m = values.mean()
    d = values - m
    return (d * d).mean()


def loss_sym(model: BasisModel, states: Sequence, energy_form: str = "model",
             true_law: ForceLawSpec | None = None, coeffs=None):
    """Population variance of the energy over rollout states ``[(r, v), ...]``."""
    if isinstance(states, tuple) and len(states) == 2 and not isinstance(states[0], tuple):
        pos, vel = states
    else:
        pos = _concat([s[0] for s in states])
        vel = _concat([s[1] for s in states])
    e = energy(model, pos, vel, energy_form, true_law, coeffs)
    if len(dn.value(e)) < 2:
        raise ValueError("need at least two states")
    return population_variance(e)


def _concat(parts):
    if not any(isinstance(p, dn.Dual) for p in parts):
        return np.concatenate(parts, axis=0)
    lanes = next(p for p in parts if isinstance(p, dn.Dual)).nlanes
    vals = np.concatenate([dn.value(p) for p in parts], axis=0)
    dots = np.concatenate([p.dot if isinstance(p, dn.Dual) else np.zeros((lanes,) + p.shape)
                           for p in parts], axis=1)
    return dn.Dual(vals, dots)


def loss_comp(model: BasisModel):
    return dn.absolute(model.coefficients()).mean()


def loss_arch(model: BasisModel):
    return entropy(model.logits, model.tau)


def _scalar(x) -> float:
    return float(np.asarray(dn.value(x)).reshape(()))


def total_loss(model: BasisModel, batch: Sequence[PreparedTrajectory], alpha_I: float = 1.0,
               alpha_E: float = 0.01, weights: LossWeights = LossWeights(), substeps: int = 5,
               energy_form: str = "model", true_law: ForceLawSpec | None = None):
    """Batch-averaged triple-action loss.

    Returns ``(total, LossBreakdown)``; ``total`` is a dual when the model
    parameters are.
    """
    if not batch:
        raise ValueError("empty batch")
    alpha_S = alpha_E if weights.alpha_S is None else weights.alpha_S
    # physics terms see the parameters only through c = A*theta: differentiate
    # w.r.t. the K entries of c and chain back to the 2K parameters afterwards
    full = model.coefficients()
    c = dn.reseed(full) if isinstance(full, dn.Dual) else full
    traj = accel = sym = 0.0
    clamps = 0
    for prep in batch:
        final, states, n_clamp = teacher_rollout(model, prep, substeps, coeffs=c)
        clamps += n_clamp
        traj = traj + loss_traj_from_rollout(final, prep)
        accel = accel + loss_accel(model, prep, coeffs=c)
        sym = sym + loss_sym(model, states, energy_form, true_law, coeffs=c)
    n = float(len(batch))
    traj = dn.chain(traj * (1.0 / n), full)
    accel = dn.chain(accel * (1.0 / n), full)
    sym = dn.chain(sym * (1.0 / n), full)
    comp, arch = loss_comp(model), loss_arch(model)
    total = (alpha_I * (traj + accel * weights.lambda_accel)
             + alpha_E * (comp * weights.lambda_comp + arch * weights.lambda_arch)
             + sym * alpha_S)
    parts = [_scalar(v) for v in (traj, accel, sym, comp, arch, total)]
    if not all(np.isfinite(parts)):
        raise TrainingInstabilityError(f"non-finite loss components {parts}")
    breakdown = LossBreakdown(*parts, alpha_I=alpha_I, alpha_E=alpha_E, alpha_S=alpha_S,
                              weights=weights, clamp_events=clamps)
    return total, breakdown


@dataclass
class GradCheckPoint:
    seed: int
    point: int
    rel_error: float
    loss: float


def gradient_check(trajs: Sequence[Trajectory], seeds=(0, 1, 2), points: int = 3,
                   alpha_E: float = 0.5, tau: float = 0.5, library=None, h: float = 1e-5,
                   energy_form: str = "model", teacher_mode: str = "clean",
                   true_law: ForceLawSpec | None = None) -> list[GradCheckPoint]:
    """Forward-mode gradient of the full loss against 5-point differences at random parameters."""
    from .forcebasis import BasisLibrary

    library = library or BasisLibrary.default()
    k = len(library)
    batch = [prepare(t, 10, teacher_mode) for t in trajs]
    out = []
    for seed in seeds:
        rng = np.random.default_rng([seed, 11])
        for i in range(points):
            at = np.concatenate([rng.uniform(-1.0, 1.0, k), rng.normal(0.5, 0.3, k)])

            def f(p):
                m = BasisModel.from_params(p, tau, library)
                return total_loss(m, batch, 1.0, alpha_E, LossWeights(), 5, energy_form,
                                  true_law)[0]

            g = dn.grad(f, at)
            fd = dn.finite_difference(lambda p: _scalar(f(p)), at, h)
            out.append(GradCheckPoint(int(seed), i, dn.max_relative_error(g.gradient, fd),
                                      float(g.value)))
    return out
