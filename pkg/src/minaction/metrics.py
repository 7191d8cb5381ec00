"""Calibration, period and power-law fits, energy-conservation diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dual as dn
from .forcebasis import BasisModel, gate_stats, radial_potential
from .orbitgen import IntegrationDivergedError, Trajectory, verlet
from .stencil import StencilConfig, wide_accel

DT_MODEL = 0.01
CALIBRATION_MIN_SELECTIVITY = 10.0
TIE_TOL = 1e-12


class CalibrationError(ValueError):
    pass


class PeriodEstimationError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass
class CalibrationResult:
    dominant_basis_index: int
    theta_opt: float
    n_points: int
    label: str = ""

    def to_json(self) -> dict:
        return {"dominant_basis_index": self.dominant_basis_index, "label": self.label,
                "theta_opt": self.theta_opt, "n_points": self.n_points}


def calibration_coefficient(phi: np.ndarray, accel_radial: np.ndarray) -> float:
    """1-D least squares ``sum(phi a) / sum(phi^2)``."""
    phi = np.asarray(phi, dtype=float)
    den = float(np.dot(phi, phi))
    if not den >= 1e-15:
        raise CalibrationError(f"degenerate calibration: sum phi^2 = {den:.3g}")
    return float(np.dot(phi, accel_radial)) / den


def radial_samples(trajs: Sequence[Trajectory], stride: int = 10):
    """Concatenated ``(r, a_radial)`` at every wide-stencil midpoint.

    ``a_radial`` is the inward component of the stencil acceleration.
    """
    radii, accel = [], []
    for t in trajs:
        cfg = StencilConfig(stride, t.dt)
        a_hat = wide_accel(t.positions, cfg)
        pos = t.positions[stride:len(t.positions) - stride]
        r = np.hypot(pos[:, 0], pos[:, 1])
        radii.append(r)
        accel.append(-np.einsum("ij,ij->i", a_hat, pos) / r)
    return np.concatenate(radii), np.concatenate(accel)


def calibrate(model: BasisModel, trajs: Sequence[Trajectory], stride: int = 10,
              index: int | None = None, require_dominant: bool = True) -> CalibrationResult:
    """Refit the dominant basis coefficient against stencil radial accelerations."""
    if index is None:
        stats = gate_stats(model)
        if require_dominant and not stats.selectivity > CALIBRATION_MIN_SELECTIVITY:
            raise CalibrationError(
                f"no dominant gate (R = {stats.selectivity:.3g} <= {CALIBRATION_MIN_SELECTIVITY:g})")
        index = stats.dominant_index
    r, a_rad = radial_samples(trajs, stride)
    term = model.library.terms[index]
    phi = np.asarray(term.value(r), dtype=float)
    theta = calibration_coefficient(phi, a_rad)
    return CalibrationResult(int(index), theta, int(r.size), term.label)


def calibrated_model(model: BasisModel, result: CalibrationResult) -> BasisModel:
    return BasisModel.single_term(model.library, result.dominant_basis_index, result.theta_opt)


def scalar_magnitude(model: BasisModel) -> Callable[[float], float]:
    """Plain-float attractive magnitude ``f(r)`` for the scalar integrator."""
    coeffs = np.asarray(dn.value(model.coefficients()), dtype=float)
    active = [(float(c), t) for c, t in zip(coeffs, model.library.terms) if c != 0.0]
    if len(active) == 1 and not active[0][1].is_log:
        c, n = active[0][0], float(active[0][1].exponent)
        return lambda r: c * r ** n
    return lambda r: sum(c * (math.log(r) if t.is_log else r ** t.exponent) for c, t in active)


def model_energy(model: BasisModel, pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(dn.value(model.coefficients()), dtype=float)
    return 0.5 * np.sum(vel * vel, axis=1) + radial_potential(coeffs, model.library, pos)


def circular_period(model: BasisModel, r: float) -> float:
    """Period of a circular orbit of radius ``r`` under the model force."""
    f = scalar_magnitude(model)(r)
    if not f > 0:
        raise PeriodEstimationError(f"model force is not attractive at r = {r:.3g}")
    return 2.0 * math.pi * math.sqrt(r / f)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Mean-removed autocorrelation with each lag divided by its overlap count."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(d, size)
    raw = np.fft.irfft(spec * np.conj(spec), size)[:n]
    return raw / np.arange(n, 0, -1)


def estimate_period(x, dt: float, lag_min: float | None = None) -> float:
    """Period of a 1-D signal from the first autocorrelation peak past ``lag_min``.

    ``lag_min`` is in samples. Without it the search starts at the first lag
    where the autocorrelation turns negative.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 4:
        raise PeriodEstimationError("need a 1-D signal of at least 4 samples")
    acf = autocorrelation(x)
    if not acf[0] > 1e-14 * max(1.0, float(np.max(np.abs(x)))) ** 2:
        raise PeriodEstimationError("signal has no variation")
    acf = acf / acf[0]
    if lag_min is None:
        neg = np.nonzero(acf < 0)[0]
        if not neg.size:
            raise PeriodEstimationError("autocorrelation never turns negative")
        start = int(neg[0])
    else:
        start = max(1, int(math.ceil(lag_min)))
    for k in range(max(start, 1), x.size - 1):
        if acf[k] > acf[k - 1] and acf[k] >= acf[k + 1]:
            lo, mid, hi = acf[k - 1], acf[k], acf[k + 1]
            curv = lo - 2.0 * mid + hi
            shift = 0.5 * (lo - hi) / curv if curv < 0 else 0.0
            return dt * (k + shift)
    raise PeriodEstimationError("no autocorrelation peak found")


@dataclass
class Rollout:
    positions: np.ndarray
    velocities: np.ndarray
    dt: float
    diverged: bool = False
    steps: int = 0

    @property
    def semi_major_axis(self) -> float:
        r = np.hypot(self.positions[:, 0], self.positions[:, 1])
        return 0.5 * float(r.min() + r.max())


def rollout(model: BasisModel, r0, v0, duration: float, dt: float = DT_MODEL) -> Rollout:
    """Velocity-Verlet rollout of the model force; stops early at the radius floor."""
    n = max(2, int(math.ceil(duration / dt)))
    pos, vel, done = verlet(scalar_magnitude(model), r0, v0, dt, n, stop_on_floor=True)
    return Rollout(pos, vel, dt, diverged=done < n, steps=done)


@dataclass
class KeplerFit:
    semi_major_axes: np.ndarray
    periods: np.ndarray
    p: float
    C: float
    r_squared: float
    p_stderr: float | None = None

    def to_json(self) -> dict:
        return {"a": self.semi_major_axes, "T": self.periods, "p": self.p, "C": self.C,
                "r_squared": self.r_squared, "p_stderr": self.p_stderr}


def fit_power_law(a, T) -> KeplerFit:
    """OLS of ``ln T^2`` on ``ln a``: ``T^2 = C a^p``."""
    a = np.asarray(a, dtype=float)
    T = np.asarray(T, dtype=float)
    if a.size != T.size or np.unique(a).size < 2:
        raise FitError("need at least two orbits with distinct semi-major axes")
    if np.any(a <= 0) or np.any(T <= 0):
        raise FitError("semi-major axes and periods must be positive")
    x, y = np.log(a), np.log(T * T)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    p = float(np.sum((x - xm) * (y - ym))) / sxx
    b = ym - p * xm
    resid = y - (p * x + b)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    stderr = math.sqrt(ss_res / (x.size - 2) / sxx) if x.size > 2 else None
    return KeplerFit(a, T, p, math.exp(b), r2, stderr)


def period_search_floor(model: BasisModel, r0, fraction: float = 0.25) -> float:
    """Minimum lag (time units) for the period search: a fraction of the circular period."""
    return fraction * circular_period(model, float(np.hypot(*np.asarray(r0, float))))


def orbit_period(model: BasisModel, r0, v0, dt: float = DT_MODEL, n_periods: float = 3.0):
    """Roll out the model from ``(r0, v0)`` and estimate its period and size."""
    floor = period_search_floor(model, r0)
    guess = floor / 0.25
    ro = rollout(model, r0, v0, n_periods * guess * 1.5, dt)
    if ro.diverged:
        raise PeriodEstimationError("rollout reached the radius floor")
    T = estimate_period(ro.positions[:, 0], dt, lag_min=floor / dt)
    return T, ro


def kepler_exponent(model: BasisModel, trajs: Sequence[Trajectory], dt: float = DT_MODEL,
                    a_source: str = "rollout") -> KeplerFit:
    """Period-size power law from model rollouts started at each orbit's first state.

    ``a_source="rollout"`` measures ``(r_min + r_max) / 2`` of the rollout;
    ``"generator"`` uses the orbit's recorded semi-major axis.
    """
    if a_source not in ("rollout", "generator"):
        raise ValueError("a_source must be 'rollout' or 'generator'")
    axes, periods = [], []
    for t in trajs:
        T, ro = orbit_period(model, t.positions[0], t.velocities[0], dt)
        axes.append(ro.semi_major_axis if a_source == "rollout" else t.a)
        periods.append(T)
    return fit_power_law(axes, periods)


@dataclass
class ConservationReport:
    sigma_H: float
    rollout_periods: float
    H_mean: float
    H_min: float
    H_max: float
    diverged: bool = False
    n_samples: int = 0

    def to_json(self) -> dict:
        return {"sigma_H": self.sigma_H, "rollout_periods": self.rollout_periods,
                "H_mean": self.H_mean, "H_min": self.H_min, "H_max": self.H_max,
                "diverged": self.diverged, "n_samples": self.n_samples}


def _report(H: np.ndarray, periods: float, diverged: bool) -> ConservationReport:
    return ConservationReport(float(np.sqrt(np.mean((H - H.mean()) ** 2))), periods,
                              float(H.mean()), float(H.min()), float(H.max()), diverged, H.size)


def conservation(model: BasisModel, r0, v0, periods: float = 5.0,
                 dt: float = DT_MODEL) -> ConservationReport:
    """Spread of the model Hamiltonian along a model rollout of ``periods`` periods."""
    try:
        T, _ = orbit_period(model, r0, v0, dt)
    except PeriodEstimationError:
        T = period_search_floor(model, r0) / 0.25
    ro = rollout(model, r0, v0, periods * T, dt)
    if len(ro.positions) < 2:
        return ConservationReport(float("inf"), periods, float("nan"), float("nan"),
                                  float("nan"), True, len(ro.positions))
    return _report(model_energy(model, ro.positions, ro.velocities), periods, ro.diverged)


def observed_conservation(model: BasisModel, traj: Trajectory) -> ConservationReport:
    """Spread of the model Hamiltonian evaluated along an observed trajectory."""
    H = model_energy(model, traj.positions, traj.velocities)
    span = float(traj.times[-1] - traj.times[0])
    return _report(H, span, False)


CONSERVATION_MODES = ("observed", "rollout")


def mean_sigma_H(model: BasisModel, trajs: Sequence[Trajectory], mode: str = "observed",
                 periods: float = 5.0) -> tuple[float, list[ConservationReport]]:
    if mode == "observed":
        reports = [observed_conservation(model, t) for t in trajs]
    elif mode == "rollout":
        reports = [conservation(model, t.positions[0], t.velocities[0], periods) for t in trajs]
    else:
        raise ValueError(f"mode must be one of {CONSERVATION_MODES}")
    return float(np.mean([r.sigma_H for r in reports])), reports


@dataclass
class SelectionVerdict:
    basis_index: int
    label: str
    margin: float | None
    group_means: dict = field(default_factory=dict)
    group_sizes: dict = field(default_factory=dict)
    tie: bool = False
    single_group: bool = False

    def to_json(self) -> dict:
        return {"basis_index": self.basis_index, "label": self.label, "margin": self.margin,
                "group_means": {str(k): v for k, v in self.group_means.items()},
                "group_sizes": {str(k): v for k, v in self.group_sizes.items()},
                "tie": self.tie, "single_group": self.single_group}


def select_by_conservation(entries: Sequence[tuple[int, float]], labels: Sequence[str] | None = None
                           ) -> SelectionVerdict:
    """Group ``(basis_index, sigma_H)`` pairs; the lowest group mean wins.

    ``margin`` is the runner-up mean over the winning mean, ``None`` with a
    single group. Near-equal means go to the smaller index and are flagged.
    """
    groups: dict[int, list[float]] = {}
    for idx, s in entries:
        if s is not None and np.isfinite(s):
            groups.setdefault(int(idx), []).append(float(s))
    if not groups:
        raise ValueError("no seed carries a finite sigma_H")
    means = {k: float(np.mean(v)) for k, v in sorted(groups.items())}
    order = sorted(means, key=lambda k: (means[k], k))
    best = order[0]
    tie = any(abs(means[k] - means[best]) <= TIE_TOL for k in order[1:])
    margin = None
    if len(order) > 1:
        margin = means[order[1]] / means[best] if means[best] > 0 else float("inf")
    label = labels[best] if labels is not None else str(best)
    return SelectionVerdict(best, label, margin, means, {k: len(v) for k, v in groups.items()},
                            tie, len(order) == 1)


@dataclass(frozen=True)
class ValidationConfig:
    stride: int = 10
    dt_model: float = DT_MODEL
    rollout_periods: float = 5.0
    conservation_mode: str = "observed"
    a_source: str = "rollout"
    require_dominant: bool = True

    def __post_init__(self):
        if self.conservation_mode not in CONSERVATION_MODES:
            raise ValueError(f"conservation_mode must be one of {CONSERVATION_MODES}")
        if self.a_source not in ("rollout", "generator"):
            raise ValueError("a_source must be 'rollout' or 'generator'")


@dataclass
class ValidationResult:
    calibration: CalibrationResult
    kepler: KeplerFit | None
    sigma_H: float
    conservation: list[ConservationReport]
    errors: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"theta_opt": self.calibration.theta_opt,
                "dominant_basis_index": self.calibration.dominant_basis_index,
                "label": self.calibration.label,
                "p": None if self.kepler is None else self.kepler.p,
                "C": None if self.kepler is None else self.kepler.C,
                "sigma_H": self.sigma_H,
                "calibration": self.calibration, "kepler_fit": self.kepler,
                "conservation": self.conservation, "errors": self.errors}


def validate(model: BasisModel, dataset, config: ValidationConfig = ValidationConfig()
             ) -> ValidationResult:
    """Calibrate on the training split, then fit periods and score conservation on the test split."""
    cal = calibrate(model, dataset.train, config.stride, require_dominant=config.require_dominant)
    fixed = calibrated_model(model, cal)
    errors = {}
    try:
        fit = kepler_exponent(fixed, dataset.test, config.dt_model, config.a_source)
    except (PeriodEstimationError, FitError, IntegrationDivergedError) as exc:
        fit = None
        errors["kepler_exponent"] = str(exc)
    sigma, reports = mean_sigma_H(fixed, dataset.test, config.conservation_mode,
                                  config.rollout_periods)
    return ValidationResult(cal, fit, sigma, reports, errors)
