"""Gated radial force basis.

The force is ``F(r) = -f(|r|) r/|r|`` with ``f = sum_i A_i theta_i phi_i``,
where the gates ``A = softmax(logits / tau)`` pick among a small library of
radial functions. Everything here works on plain arrays and on
:class:`~minaction.dual.Dual` parameters alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import dual as dn

R_MIN = 1e-6


class SingularityError(ValueError):
    """A radius fell below the singularity floor."""


@dataclass(frozen=True)
class BasisTerm:
    """One radial function: ``r**exponent`` or ``ln r`` when ``exponent is None``."""

    exponent: float | None

    @property
    def is_log(self) -> bool:
        return self.exponent is None

    @property
    def label(self) -> str:
        if self.is_log:
            return "ln r"
        e = self.exponent
        if e == 0:
            return "1"
        if e == 1:
            return "r"
        text = f"{e:g}"
        return f"r^{text}"

    def value(self, r):
        if self.is_log:
            return dn.log(r)
        if self.exponent == 0:
            return r * 0.0 + 1.0
        if self.exponent == 1:
            return r
        return r ** self.exponent

    def derivative(self, r):
        if self.is_log:
            return 1.0 / r
        if self.exponent == 0:
            return r * 0.0
        if self.exponent == 1:
            return r * 0.0 + 1.0
        return self.exponent * r ** (self.exponent - 1.0)

    def antiderivative(self, r):
        if self.is_log:
            return r * dn.log(r) - r
        if self.exponent == -1:
            return dn.log(r)
        n1 = self.exponent + 1.0
        return (r ** n1) * (1.0 / n1)

    def to_json(self):
        return "ln" if self.is_log else self.exponent

    @classmethod
    def from_json(cls, obj) -> "BasisTerm":
        if obj in ("ln", "log", "ln r"):
            return cls(None)
        return cls(float(obj))


@dataclass(frozen=True)
class BasisLibrary:
    terms: tuple[BasisTerm, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("basis library must be nonempty")

    @classmethod
    def from_exponents(cls, exponents: Sequence, log_term: bool = False) -> "BasisLibrary":
        terms = [BasisTerm.from_json(e) for e in exponents]
        if log_term:
            terms.append(BasisTerm(None))
        return cls(tuple(terms))

    @classmethod
    def default(cls) -> "BasisLibrary":
        return cls.from_exponents([-2, -1, 1, 0, -3])

    def __len__(self):
        return len(self.terms)

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.terms]

    def index_of(self, exponent) -> int:
        target = BasisTerm.from_json(exponent)
        return self.terms.index(target)

    def features(self, r):
        """Matrix ``[..., K]`` of ``phi_i(r)``."""
        return dn.stack([t.value(r) for t in self.terms], axis=-1)

    def derivatives(self, r):
        return np.stack([t.derivative(r) for t in self.terms], axis=-1)

    def antiderivatives(self, r):
        return dn.stack([t.antiderivative(r) for t in self.terms], axis=-1)

    def to_json(self) -> list:
        return [t.to_json() for t in self.terms]

    @classmethod
    def from_json(cls, obj) -> "BasisLibrary":
        return cls(tuple(BasisTerm.from_json(o) for o in obj))


LIBRARY_PRESETS = {
    "standard": [-2, -1, 1, 0, -3],
    "confounders": [-2, -1, 1, 0, -3, -2.5, -1.5],
    "expanded": [-2, -1, 1, 0, -3, 2, -4, "ln"],
    "missing": [-1, 1, 0, -3],
}


def softmax(logits, tau: float):
    """Gate probabilities ``exp(l_i/tau) / sum_j exp(l_j/tau)``."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    shift = float(np.max(dn.value(logits)))
    z = dn.exp((logits - shift) * (1.0 / tau))
    return z / z.sum()


def log_softmax(logits, tau: float):
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = (logits - float(np.max(dn.value(logits)))) * (1.0 / tau)
    return z - dn.log(dn.exp(z).sum())


def entropy(logits, tau: float):
    """Gate entropy ``-sum A ln A``, finite even when some gates underflow."""
    logp = log_softmax(logits, tau)
    return -(dn.exp(logp) * logp).sum()


def _radius(pos, floor: float, clamp: bool):
    pv = dn.value(pos)
    x, y = pv[..., 0], pv[..., 1]
    rho = np.sqrt(x * x + y * y)
    active = rho < floor
    if np.any(active):
        if not clamp:
            raise SingularityError(f"radius {float(np.min(rho)):.3g} below floor {floor:g}")
        rho = np.where(active, floor, rho)
    drho = None
    if isinstance(pos, dn.Dual):
        drho = (pos.dot[..., 0] * x + pos.dot[..., 1] * y) / rho
        if np.any(active):
            drho = np.where(active, 0.0, drho)
    return pv, rho, drho


def _radial_sum(coeffs, table: np.ndarray, slope: np.ndarray, drho):
    """``sum_i c_i table_i`` with tangents from both the coefficients and the radius."""
    cv = dn.value(coeffs)
    val = table @ cv
    dot = None
    if isinstance(coeffs, dn.Dual):
        dot = np.einsum("pk,...k->p...", coeffs.dot, table)
    if drho is not None:
        term = (slope @ cv) * drho
        dot = term if dot is None else dot + term
    return val, dot


def radial_magnitude(coeffs, library: BasisLibrary, r):
    """``f(r) = sum_i c_i phi_i(r)`` for effective coefficients ``c = A*theta``."""
    if isinstance(r, dn.Dual) or isinstance(coeffs, dn.Dual):
        return (library.features(r) * coeffs).sum(axis=-1)
    return library.features(r) @ np.asarray(coeffs, dtype=float)


def potential_from_coeffs(coeffs, library: BasisLibrary, r):
    if isinstance(r, dn.Dual) or isinstance(coeffs, dn.Dual):
        return (library.antiderivatives(r) * coeffs).sum(axis=-1)
    return library.antiderivatives(r) @ np.asarray(coeffs, dtype=float)


def radial_potential(coeffs, library: BasisLibrary, pos, floor: float = R_MIN, clamp: bool = True):
    """``V(|r|)`` at positions ``pos[..., 2]``."""
    _, rho, drho = _radius(pos, floor, clamp)
    table = dn.value(library.antiderivatives(rho))
    slope = dn.value(library.features(rho))
    val, dot = _radial_sum(coeffs, table, slope, drho)
    return val if dot is None else dn.Dual(val, dot)


def radial_force(coeffs, library: BasisLibrary, pos, floor: float = R_MIN, clamp: bool = False):
    """Force at positions ``pos[..., 2]``.

    With ``clamp`` the radius is floored (used inside training rollouts);
    otherwise a radius under the floor raises :class:`SingularityError`.
    Tangents are propagated in closed form rather than through generic dual
    arithmetic, which keeps training rollouts cheap.
    """
    pv, rho, drho = _radius(pos, floor, clamp)
    phi = library.features(rho)
    dphi = library.derivatives(rho)
    f, df = _radial_sum(coeffs, phi, dphi, drho)
    g = f / rho
    val = -g[..., None] * pv
    if df is None and drho is None:
        return val
    dg = df if df is not None else 0.0
    if drho is not None:
        dg = dg - g * drho
    dg = dg / rho
    dot = -dg[..., None] * pv
    if isinstance(pos, dn.Dual):
        dot = dot - g[..., None] * pos.dot
    return dn.Dual(val, dot)


@dataclass
class BasisModel:
    """Gate logits, coefficients and temperature over a basis library.

    ``logits`` and ``thetas`` may be duals while the trainer differentiates.
    """

    logits: object
    thetas: object
    tau: float = 1.0
    library: BasisLibrary = field(default_factory=BasisLibrary.default)

    def __post_init__(self):
        k = len(self.library)
        if len(self.logits) != k or len(self.thetas) != k:
            raise ValueError(f"expected {k} logits and coefficients")
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @property
    def K(self) -> int:
        return len(self.library)

    @classmethod
    def zeros(cls, library: BasisLibrary | None = None, tau: float = 1.0) -> "BasisModel":
        library = library or BasisLibrary.default()
        k = len(library)
        return cls(np.zeros(k), np.zeros(k), tau, library)

    @classmethod
    def from_params(cls, params, tau: float, library: BasisLibrary) -> "BasisModel":
        """Parameter ordering: ``[logits_1..K, thetas_1..K]``."""
        k = len(library)
        return cls(params[0:k], params[k:2 * k], tau, library)

    @classmethod
    def single_term(cls, library: BasisLibrary, index: int, coefficient: float) -> "BasisModel":
        """A one-hot model: gate exactly 1 on ``index``."""
        logits = np.full(len(library), -1e3)
        logits[index] = 0.0
        thetas = np.zeros(len(library))
        thetas[index] = coefficient
        return cls(logits, thetas, 1.0, library)

    def params(self) -> np.ndarray:
        return np.concatenate([dn.value(self.logits), dn.value(self.thetas)])

    def with_tau(self, tau: float) -> "BasisModel":
        return replace(self, tau=tau)

    def gates(self):
        return softmax(self.logits, self.tau)

    def coefficients(self):
        return self.gates() * self.thetas

    def force(self, pos, clamp: bool = False):
        return radial_force(self.coefficients(), self.library, pos, clamp=clamp)

    def magnitude(self, r):
        return radial_magnitude(self.coefficients(), self.library, r)

    def potential(self, r):
        rv = dn.value(r)
        if np.any(rv <= R_MIN):
            raise SingularityError(f"radius {float(np.min(rv)):.3g} below floor {R_MIN:g}")
        return potential_from_coeffs(self.coefficients(), self.library, r)

    def potential_at(self, pos, clamp: bool = True):
        """Potential at 2-D positions (differentiable in parameters and positions)."""
        return radial_potential(self.coefficients(), self.library, pos, clamp=clamp)

    def snapshot(self) -> "BasisModel":
        return BasisModel(dn.value(self.logits).copy(), dn.value(self.thetas).copy(),
                          self.tau, self.library)

    def to_json(self) -> dict:
        return {
            "library": self.library.to_json(),
            "logits": [float(v) for v in dn.value(self.logits)],
            "thetas": [float(v) for v in dn.value(self.thetas)],
            "tau": float(self.tau),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BasisModel":
        return cls(np.asarray(obj["logits"], float), np.asarray(obj["thetas"], float),
                   float(obj["tau"]), BasisLibrary.from_json(obj["library"]))


@dataclass(frozen=True)
class GateStats:
    gates: np.ndarray
    selectivity: float
    dominant_index: int
    concentration: float
    hhi: float


def concentration(weights) -> tuple[float, float]:
    """Normalized HHI of a nonnegative weight vector: ``(hhi, c_gate)``."""
    p = np.asarray(weights, dtype=float)
    p = p / p.sum()
    hhi = float(np.sum(p * p))
    k = p.size
    if k == 1:
        return hhi, 1.0
    c = (k * hhi - 1.0) / (k - 1.0)
    return hhi, float(min(max(c, 0.0), 1.0))


def selectivity(gates) -> float:
    a = np.sort(np.asarray(gates, dtype=float))[::-1]
    if a.size < 2:
        return math.inf
    return float(a[0] / a[1]) if a[1] > 0 else math.inf


def gate_stats(model: BasisModel, theta_weighted: bool = True) -> GateStats:
    a = np.asarray(dn.value(model.gates()))
    if theta_weighted:
        w = a * np.abs(dn.value(model.thetas))
        if w.sum() < 1e-15:
            w = a
    else:
        w = a
    hhi, c = concentration(w)
    return GateStats(a, selectivity(a), int(np.argmax(a)), c, hhi)


def log_selectivity(model: BasisModel) -> float:
    """``ln R`` from the logit gap: ``(l_dom - l_2nd) / tau``."""
    l = np.sort(np.asarray(dn.value(model.logits), dtype=float))[::-1]
    return float((l[0] - l[1]) / model.tau)
