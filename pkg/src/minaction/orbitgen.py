"""Synthetic central-force orbits with observation noise.

Orbits are integrated with velocity Verlet (kick-drift-kick) at a fine
simulator step and then downsampled to the observation cadence. Kepler
orbits start at perihelion; Hooke orbits start on the +x semi-axis of their
origin-centred ellipse.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .forcebasis import R_MIN


class IntegrationDivergedError(RuntimeError):
    def __init__(self, step: int, radius: float):
        super().__init__(f"integration diverged at step {step}: radius {radius:.3g} "
                         f"below floor {R_MIN:g}")
        self.step = step
        self.radius = radius


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ForceLawSpec:
    kind: str = "kepler"
    coupling: float = 1.0

    def __post_init__(self):
        if self.kind not in ("kepler", "hooke"):
            raise ConfigError(f"unknown force law {self.kind!r}")
        if not self.coupling > 0:
            raise ConfigError("coupling must be positive")

    def magnitude(self, r: float) -> float:
        """Attractive radial acceleration |F| at radius r."""
        if self.kind == "kepler":
            return self.coupling / (r * r)
        return self.coupling * r

    def magnitude_fn(self) -> Callable[[float], float]:
        c = self.coupling
        if self.kind == "kepler":
            return lambda r: c / (r * r)
        return lambda r: c * r

    def potential(self, r):
        if self.kind == "kepler":
            return -self.coupling / r
        return 0.5 * self.coupling * r * r

    def period(self, a: float) -> float:
        if self.kind == "kepler":
            return 2.0 * math.pi * a ** 1.5 / math.sqrt(self.coupling)
        return 2.0 * math.pi / math.sqrt(self.coupling)

    def initial_state(self, a: float, e: float) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "kepler":
            rp = a * (1.0 - e)
            vp = math.sqrt(self.coupling * (1.0 + e) / (a * (1.0 - e)))
            return np.array([rp, 0.0]), np.array([0.0, vp])
        omega = math.sqrt(self.coupling)
        return np.array([a, 0.0]), np.array([0.0, omega * a * math.sqrt(1.0 - e * e)])

    def elements(self, r0, v0) -> tuple[float, float]:
        """Semi-major axis and eccentricity of the orbit through (r0, v0)."""
        x, y = float(r0[0]), float(r0[1])
        vx, vy = float(v0[0]), float(v0[1])
        r = math.hypot(x, y)
        v2 = vx * vx + vy * vy
        ang = x * vy - y * vx
        if self.kind == "kepler":
            mu = self.coupling
            a = 1.0 / (2.0 / r - v2 / mu)
            e2 = 1.0 - ang * ang / (mu * a) if a > 0 else 1.0
            return a, math.sqrt(max(e2, 0.0))
        k = self.coupling
        s = (v2 + k * r * r) / k          # A^2 + B^2
        p = abs(ang) / math.sqrt(k)       # A * B
        disc = math.sqrt(max(s * s - 4.0 * p * p, 0.0))
        big, small = (s + disc) / 2.0, (s - disc) / 2.0
        return math.sqrt(big), math.sqrt(max(1.0 - small / big, 0.0)) if big > 0 else 0.0


def verlet(magnitude: Callable[[float], float], r0, v0, dt: float, n_steps: int,
           sample_every: int = 1, floor: float = R_MIN, stop_on_floor: bool = False):
    """Kick-drift-kick integration of an attractive central force.

    Returns ``(positions, velocities, n_done)`` sampled every ``sample_every``
    steps, starting with the initial state. ``magnitude(r)`` is the attractive
    radial acceleration. A radius under ``floor`` raises
    :class:`IntegrationDivergedError` unless ``stop_on_floor`` is set, in
    which case the samples gathered so far are returned.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    x, y = float(r0[0]), float(r0[1])
    vx, vy = float(v0[0]), float(v0[1])
    r = math.hypot(x, y)
    if not r > floor:
        raise IntegrationDivergedError(0, r)
    n_samples = n_steps // sample_every + 1
    pos = np.empty((n_samples, 2))
    vel = np.empty((n_samples, 2))
    pos[0] = x, y
    vel[0] = vx, vy
    k = magnitude(r) / r
    ax, ay = -k * x, -k * y
    h = 0.5 * dt
    j = 1
    countdown = sample_every
    for step in range(1, n_steps + 1):
        vx += h * ax
        vy += h * ay
        x += dt * vx
        y += dt * vy
        r = math.sqrt(x * x + y * y)
        if not r > floor:
            if stop_on_floor:
                return pos[:j], vel[:j], step - 1
            raise IntegrationDivergedError(step, r)
        k = magnitude(r) / r
        ax, ay = -k * x, -k * y
        vx += h * ax
        vy += h * ay
        countdown -= 1
        if countdown == 0:
            pos[j] = x, y
            vel[j] = vx, vy
            j += 1
            countdown = sample_every
    return pos, vel, n_steps


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    clean_positions: np.ndarray
    a: float
    e: float
    noise_sigma: float = 0.0

    def __post_init__(self):
        n = len(self.times)
        if n < 3 or not (len(self.positions) == len(self.velocities) == len(self.clean_positions) == n):
            raise ValueError("trajectory arrays must share a length of at least 3")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __len__(self):
        return len(self.times)

    def to_json(self) -> dict:
        return {
            "a": self.a,
            "e": self.e,
            "times": self.times,
            "clean_positions": self.clean_positions,
            "noisy_positions": self.positions,
            "velocities": self.velocities,
        }

    @classmethod
    def from_json(cls, obj: dict, noise_sigma: float = 0.0) -> "Trajectory":
        return cls(np.asarray(obj["times"], float), np.asarray(obj["noisy_positions"], float),
                   np.asarray(obj["velocities"], float), np.asarray(obj["clean_positions"], float),
                   float(obj["a"]), float(obj["e"]), noise_sigma)


def integrate_orbit(law: ForceLawSpec, r0, v0, dt: float, n_steps: int,
                    sample_every: int = 1) -> Trajectory:
    """Clean trajectory of ``n_steps`` Verlet steps (``n_steps + 1`` states when unsampled)."""
    if np.hypot(*r0) <= 0:
        raise ConfigError("initial radius must be positive")
    pos, vel, _ = verlet(law.magnitude_fn(), r0, v0, dt, n_steps, sample_every)
    times = np.arange(len(pos)) * (dt * sample_every)
    a, e = law.elements(r0, v0)
    return Trajectory(times, pos.copy(), vel, pos, a, e, 0.0)


@dataclass(frozen=True)
class GeneratorConfig:
    system: str = "kepler"
    coupling: float = 1.0
    n_orbits: int = 16
    a_min: float = 0.5
    a_max: float = 5.0
    e_min: float = 0.0
    e_max: float = 0.3
    dt_sim: float = 1e-3
    dt_obs: float = 0.05
    periods: float = 5.0
    noise_fraction: float = 0.01
    train_fraction: float = 0.70
    test_fraction: float = 0.15

    def validate(self):
        ForceLawSpec(self.system, self.coupling)
        if not 0 < self.a_min <= self.a_max:
            raise ConfigError("need 0 < a_min <= a_max")
        if not 0 <= self.e_min <= self.e_max < 1:
            raise ConfigError("need 0 <= e_min <= e_max < 1")
        if self.noise_fraction < 0:
            raise ConfigError("noise fraction must be nonnegative")
        if self.n_orbits < 1:
            raise ConfigError("need at least one orbit")
        if not (0 < self.dt_sim <= self.dt_obs):
            raise ConfigError("need 0 < dt_sim <= dt_obs")
        ratio = self.dt_obs / self.dt_sim
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigError("dt_obs must be an integer multiple of dt_sim")
        if self.periods <= 0:
            raise ConfigError("periods must be positive")

    @property
    def law(self) -> ForceLawSpec:
        return ForceLawSpec(self.system, self.coupling)

    @property
    def skip(self) -> int:
        return int(round(self.dt_obs / self.dt_sim))

    def split_sizes(self) -> tuple[int, int, int]:
        n = self.n_orbits
        n_train = int(round(self.train_fraction * n))
        n_test = int(round(self.test_fraction * n))
        n_train = min(n_train, n)
        n_test = min(n_test, n - n_train)
        return n_train, n - n_train - n_test, n_test

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    config: GeneratorConfig
    orbits: list[Trajectory]
    seed: int
    noise_seed: int
    noise_sigma: float
    split: dict = field(default_factory=dict)

    @property
    def train(self) -> list[Trajectory]:
        return [self.orbits[i] for i in self.split["train"]]

    @property
    def val(self) -> list[Trajectory]:
        return [self.orbits[i] for i in self.split["val"]]

    @property
    def test(self) -> list[Trajectory]:
        return [self.orbits[i] for i in self.split["test"]]

    @property
    def law(self) -> ForceLawSpec:
        return self.config.law

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "seed": self.seed,
            "noise_seed": self.noise_seed,
            "noise_sigma": self.noise_sigma,
            "split": self.split,
            "orbits": [o.to_json() for o in self.orbits],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Dataset":
        config = GeneratorConfig(**obj["config"])
        sigma = float(obj["noise_sigma"])
        orbits = [Trajectory.from_json(o, sigma) for o in obj["orbits"]]
        split = {k: [int(i) for i in v] for k, v in obj["split"].items()}
        return cls(config, orbits, int(obj["seed"]), int(obj["noise_seed"]), sigma, split)


def sample_elements(config: GeneratorConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    log_a = rng.uniform(math.log(config.a_min), math.log(config.a_max), config.n_orbits)
    e = rng.uniform(config.e_min, config.e_max, config.n_orbits)
    return np.exp(log_a), e


def generate_dataset(config: GeneratorConfig | None = None, seed: int = 0,
                     noise_seed: int | None = None) -> Dataset:
    """Sample, integrate, downsample, corrupt and split ``config.n_orbits`` orbits.

    Orbit elements come from a sub-seed of ``seed``; the noise from a
    separate sub-seed of ``noise_seed`` (default ``seed``), so the noise can
    be redrawn over fixed orbits.
    """
    config = config or GeneratorConfig()
    config.validate()
    law = config.law
    noise_seed = seed if noise_seed is None else noise_seed
    a_all, e_all = sample_elements(config, seed)

    clean = []
    for a, e in zip(a_all, e_all):
        r0, v0 = law.initial_state(a, e)
        n_obs = int(math.floor(config.periods * law.period(a) / config.dt_obs + 1e-9)) + 1
        n_steps = (n_obs - 1) * config.skip
        pos, vel, _ = verlet(law.magnitude_fn(), r0, v0, config.dt_sim, n_steps, config.skip)
        clean.append((pos, vel, float(a), float(e)))

    sigma = config.noise_fraction * float(np.median(a_all))
    orbits = _corrupt(clean, config.dt_obs, sigma, noise_seed)

    n_train, n_val, _ = config.split_sizes()
    idx = list(range(config.n_orbits))
    split = {"train": idx[:n_train], "val": idx[n_train:n_train + n_val],
             "test": idx[n_train + n_val:]}
    return Dataset(config, orbits, seed, noise_seed, sigma, split)


def _corrupt(clean, dt_obs: float, sigma: float, noise_seed: int) -> list[Trajectory]:
    rng = np.random.default_rng(np.random.SeedSequence([noise_seed, 1]))
    orbits = []
    for pos, vel, a, e in clean:
        times = np.arange(len(pos)) * dt_obs
        noisy = pos + rng.normal(0.0, 1.0, size=pos.shape) * sigma if sigma > 0 else pos.copy()
        orbits.append(Trajectory(times, noisy, vel, pos, a, e, sigma))
    return orbits


def renoise(dataset: Dataset, noise_seed: int) -> Dataset:
    """Same clean orbits with a fresh noise draw; equals regenerating with ``noise_seed``."""
    clean = [(t.clean_positions, t.velocities, t.a, t.e) for t in dataset.orbits]
    orbits = _corrupt(clean, dataset.config.dt_obs, dataset.noise_sigma, noise_seed)
    return Dataset(dataset.config, orbits, dataset.seed, noise_seed, dataset.noise_sigma,
                   dataset.split)


def specific_energy(law: ForceLawSpec, pos, vel) -> np.ndarray:
    r = np.hypot(pos[:, 0], pos[:, 1])
    return 0.5 * np.sum(vel * vel, axis=1) + law.potential(r)


def angular_momentum(pos, vel) -> np.ndarray:
    return pos[:, 0] * vel[:, 1] - pos[:, 1] * vel[:, 0]
