"""Two-phase Adam training, crystallization telemetry and schedule geometry."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dual as dn
from .actionloss import (LossBreakdown, LossWeights, PreparedTrajectory, TrainingInstabilityError,
                         prepare, total_loss)
from .forcebasis import BasisLibrary, BasisModel, gate_stats, log_selectivity
from .metrics import (CalibrationError, ValidationConfig, ValidationResult, select_by_conservation,
                      validate)
from .orbitgen import Dataset

MILESTONES = {"onset": 10.0, "sparse": 100.0, "frozen": 1000.0}
NODE_RATIOS = ((3, 1), (2, 1), (3, 2), (1, 1))


@dataclass(frozen=True)
class Schedule:
    warmup_epochs: int = 50
    total_epochs: int = 200
    alpha_I: float = 1.0
    alpha_E_start: float = 0.01
    alpha_E_end: float = 1.0
    tau_start: float = 1.0
    tau_end: float = 0.05

    def __post_init__(self):
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 < warmup_epochs < total_epochs")
        if not (self.tau_start > 0 and self.tau_end > 0):
            raise ValueError("temperatures must be positive")


def schedule_at(schedule: Schedule, epoch: int) -> tuple[float, float, float]:
    """``(alpha_I, alpha_E, tau)`` for a 1-based epoch.

    Flat during warmup; afterwards alpha_E ramps linearly and tau decays
    geometrically, reaching the end values at the last epoch.
    """
    if not 1 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside 1..{schedule.total_epochs}")
    if epoch <= schedule.warmup_epochs:
        return schedule.alpha_I, schedule.alpha_E_start, schedule.tau_start
    frac = (epoch - schedule.warmup_epochs) / (schedule.total_epochs - schedule.warmup_epochs)
    alpha_E = schedule.alpha_E_start + (schedule.alpha_E_end - schedule.alpha_E_start) * frac
    tau = schedule.tau_start * (schedule.tau_end / schedule.tau_start) ** frac
    return schedule.alpha_I, alpha_E, tau


def ratio_nodes(schedule: Schedule, ratios=NODE_RATIOS, tol: float = 0.1) -> list[tuple[int, str]]:
    """Epochs where ``alpha_E / tau`` sits within ``tol`` of a listed ``p:q``."""
    nodes = []
    for epoch in range(1, schedule.total_epochs + 1):
        _, alpha_E, tau = schedule_at(schedule, epoch)
        for p, q in ratios:
            if abs(alpha_E * q / (tau * p) - 1.0) < tol:
                nodes.append((epoch, f"{p}:{q}"))
    return nodes


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    grads = np.asarray(grads, dtype=float)
    if state.m.shape != params.shape:
        raise ValueError("optimizer state does not match parameter shape")
    if not np.all(np.isfinite(grads)):
        raise TrainingInstabilityError("non-finite gradient")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    schedule: Schedule = field(default_factory=Schedule)
    weights: LossWeights = field(default_factory=LossWeights)
    teacher_mode: str = "clean"
    energy_form: str = "model"
    logit_bias: tuple | None = None
    library: tuple = (-2.0, -1.0, 1.0, 0.0, -3.0)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    shuffle: bool = False
    substeps: int = 5
    stride: int = 10
    theta_init_std: float = 0.01
    logit_init_range: float = 0.1

    def basis(self) -> BasisLibrary:
        return BasisLibrary.from_json(list(self.library))

    def to_json(self) -> dict:
        d = asdict(self)
        d["library"] = self.basis().to_json()
        d["logit_bias"] = None if self.logit_bias is None else list(self.logit_bias)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        if "schedule" in obj and isinstance(obj["schedule"], dict):
            obj["schedule"] = Schedule(**obj["schedule"])
        if "weights" in obj and isinstance(obj["weights"], dict):
            obj["weights"] = LossWeights(**obj["weights"])
        if obj.get("logit_bias") is not None:
            obj["logit_bias"] = tuple(float(x) for x in obj["logit_bias"])
        if "library" in obj:
            obj["library"] = tuple(obj["library"])
        return cls(**obj)


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    gates: np.ndarray
    logits: np.ndarray
    thetas: np.ndarray
    tau: float
    selectivity: float
    log_selectivity: float
    concentration: float
    clamp_events: int


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    onset: int | None = None
    sparse: int | None = None
    frozen: int | None = None
    span: int | None = None
    growth_rate: float | None = None
    node_epochs: list = field(default_factory=list)

    def selectivities(self) -> np.ndarray:
        return np.array([r.selectivity for r in self.records])

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    CSV_HEADER = ["epoch", "traj", "accel", "sym", "comp", "arch", "total", "alpha_E", "tau",
                  "selectivity", "c_gate", "clamp_events"]

    def csv_rows(self):
        for r in self.records:
            L = r.loss
            yield ([r.epoch, L.traj, L.accel, L.sym, L.comp, L.arch, L.total, L.alpha_E, r.tau,
                    r.selectivity, r.concentration, r.clamp_events]
                   + [float(a) for a in r.gates] + [float(t) for t in r.thetas])

    def csv_header(self) -> list[str]:
        k = len(self.records[0].gates) if self.records else 0
        return self.CSV_HEADER + [f"gate_{i}" for i in range(k)] + [f"theta_{i}" for i in range(k)]

    def milestone_json(self) -> dict:
        return {"onset": self.onset, "sparse": self.sparse, "frozen": self.frozen,
                "span": self.span, "growth_rate": self.growth_rate,
                "node_epochs": [[e, r] for e, r in self.node_epochs]}


def milestones(log: TrainLog, min_fit_points: int = 3) -> TrainLog:
    """Fill first-crossing milestones, span and geometric growth rate in place."""
    if not log.records:
        return log
    epochs = np.array([r.epoch for r in log.records])
    sel = log.selectivities()
    found = {}
    for name, thr in MILESTONES.items():
        hit = np.nonzero(sel >= thr)[0]
        found[name] = int(epochs[hit[0]]) if hit.size else None
    log.onset, log.sparse, log.frozen = found["onset"], found["sparse"], found["frozen"]
    log.span = log.frozen - log.onset if log.onset is not None and log.frozen is not None else None
    log.growth_rate = None
    if log.span is not None:
        window = (epochs >= log.onset) & (epochs <= log.frozen)
        if np.count_nonzero(window) >= min_fit_points:
            slope = np.polyfit(epochs[window].astype(float), np.log(sel[window]), 1)[0]
            log.growth_rate = float(math.exp(slope))
    return log


class InstabilityError(TrainingInstabilityError):
    def __init__(self, message: str, epoch: int, snapshot: BasisModel | None):
        super().__init__(message)
        self.epoch = epoch
        self.snapshot = snapshot


def init_model(config: TrainConfig) -> BasisModel:
    library = config.basis()
    k = len(library)
    rng = np.random.default_rng(config.seed)
    logits = rng.uniform(-config.logit_init_range, config.logit_init_range, k)
    thetas = rng.normal(0.0, config.theta_init_std, k)
    if config.logit_bias is not None:
        bias = np.asarray(config.logit_bias, dtype=float)
        if bias.size != k:
            raise ValueError(f"logit bias needs {k} entries")
        logits = logits + bias
    return BasisModel(logits, thetas, config.schedule.tau_start, library)


def make_batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(dataset: Dataset, config: TrainConfig = TrainConfig(), progress=None):
    """Train a gated basis model; returns ``(final model, TrainLog)``.

    One epoch is one pass over fixed, index-ordered batches of the training
    split, with one Adam step per batch.
    """
    trajs = dataset.train
    if not trajs:
        raise ValueError("dataset has no training trajectories")
    preps: list[PreparedTrajectory] = [prepare(t, config.stride, config.teacher_mode)
                                       for t in trajs]
    model = init_model(config)
    params = model.params()
    state = AdamState.zeros(params.size)
    shuffle_rng = np.random.default_rng([config.seed, 7]) if config.shuffle else None
    log = TrainLog()
    sched = config.schedule
    snapshot = model.snapshot()

    for epoch in range(1, sched.total_epochs + 1):
        alpha_I, alpha_E, tau = schedule_at(sched, epoch)
        parts = []
        for idx in make_batches(len(preps), config.batch_size, shuffle_rng):
            batch = [preps[i] for i in idx]

            def objective(p):
                m = BasisModel.from_params(p, tau, model.library)
                total, br = total_loss(m, batch, alpha_I, alpha_E, config.weights,
                                       config.substeps, config.energy_form, dataset.law)
                parts.append(br)
                return total

            try:
                g = dn.grad(objective, params)
                params, state = adam_step(params, g.gradient, state, config.lr,
                                          config.beta1, config.beta2, config.eps)
            except (TrainingInstabilityError, dn.EvaluationError) as exc:
                raise InstabilityError(f"epoch {epoch}: {exc}", epoch - 1, snapshot) from exc
            if not np.all(np.isfinite(params)):
                raise InstabilityError(f"epoch {epoch}: non-finite parameters", epoch - 1, snapshot)

        model = BasisModel.from_params(params, tau, model.library)
        snapshot = model.snapshot()
        stats = gate_stats(model)
        log.records.append(EpochRecord(
            epoch=epoch, loss=_mean_breakdown(parts), gates=stats.gates,
            logits=np.array(model.logits), thetas=np.array(model.thetas), tau=tau,
            selectivity=stats.selectivity, log_selectivity=log_selectivity(model),
            concentration=stats.concentration, clamp_events=sum(p.clamp_events for p in parts)))
        if progress is not None:
            progress(log.records[-1])

    milestones(log)
    log.node_epochs = ratio_nodes(sched)
    return snapshot, log


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    avg = {k: sum(getattr(p, k) for p in parts) / n
           for k in ("traj", "accel", "sym", "comp", "arch", "total")}
    first = parts[0]
    return replace(first, **avg, clamp_events=sum(p.clamp_events for p in parts))


@dataclass
class SeedOutcome:
    seed: int
    selected_basis_index: int | None = None
    label: str = ""
    calibrated_coefficient: float | None = None
    kepler_exponent: float | None = None
    sigma_H: float | None = None
    C_gate: float | None = None
    milestones: dict = field(default_factory=dict)
    final_gates: list = field(default_factory=list)
    error: str | None = None
    model: BasisModel | None = None
    log: TrainLog | None = None
    validation: ValidationResult | None = None

    def to_json(self) -> dict:
        return {"seed": self.seed, "selected_basis_index": self.selected_basis_index,
                "label": self.label, "calibrated_coefficient": self.calibrated_coefficient,
                "kepler_exponent": self.kepler_exponent, "sigma_H": self.sigma_H,
                "C_gate": self.C_gate, "milestones": self.milestones,
                "final_gates": self.final_gates, "error": self.error}


@dataclass
class SweepResult:
    outcomes: list[SeedOutcome]
    verdict: object = None
    labels: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"seeds": self.outcomes, "verdict": self.verdict, "labels": self.labels}

    def selection_entries(self) -> list[tuple[int, float]]:
        return [(o.selected_basis_index, o.sigma_H) for o in self.outcomes
                if o.selected_basis_index is not None and o.sigma_H is not None]


def run_seed(dataset: Dataset, config: TrainConfig, seed: int,
             validation: ValidationConfig = ValidationConfig()) -> SeedOutcome:
    """Train, calibrate and validate one seed; failures are recorded, not raised."""
    cfg = replace(config, seed=seed)
    out = SeedOutcome(seed)
    try:
        model, log = train(dataset, cfg)
    except InstabilityError as exc:
        out.error = f"training: {exc}"
        out.model = exc.snapshot
        return out
    stats = gate_stats(model)
    out.model, out.log = model, log
    out.selected_basis_index = stats.dominant_index
    out.label = model.library.labels[stats.dominant_index]
    out.C_gate = stats.concentration
    out.milestones = log.milestone_json()
    out.milestones.pop("node_epochs", None)
    out.final_gates = [float(a) for a in stats.gates]
    try:
        res = validate(model, dataset, validation)
    except CalibrationError as exc:
        out.error = f"calibration: {exc}"
        return out
    out.validation = res
    out.calibrated_coefficient = res.calibration.theta_opt
    out.kepler_exponent = None if res.kepler is None else res.kepler.p
    out.sigma_H = res.sigma_H
    if res.errors:
        out.error = "; ".join(f"{k}: {v}" for k, v in res.errors.items())
    return out


def _run_seed_job(args):
    return run_seed(*args)


def sweep(dataset: Dataset, config: TrainConfig, seeds, validation: ValidationConfig =
          ValidationConfig(), jobs: int = 1, progress=None) -> SweepResult:
    """Per-seed train + validate, then pick the basis family with the lowest mean sigma_H."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    jobs_args = [(dataset, config, s, validation) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            outcomes = []
            for o in pool.map(_run_seed_job, jobs_args):
                outcomes.append(o)
                if progress is not None:
                    progress(o)
    else:
        outcomes = []
        for a in jobs_args:
            outcomes.append(run_seed(*a))
            if progress is not None:
                progress(outcomes[-1])
    labels = config.basis().labels
    result = SweepResult(outcomes, None, labels)
    entries = result.selection_entries()
    if entries:
        result.verdict = select_by_conservation(entries, labels)
    return result
