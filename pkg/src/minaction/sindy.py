"""Sparse regression baseline (STLSQ) on the radial basis library."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .forcebasis import BasisLibrary
from .metrics import radial_samples
from .orbitgen import Dataset

RIDGE = 1e-12
MAX_CONDITION = 1e14


class IllConditionedError(np.linalg.LinAlgError):
    pass


def _solve(features: np.ndarray, targets: np.ndarray, active: np.ndarray, labels=None):
    cols = features[:, active]
    gram = cols.T @ cols
    gram[np.diag_indices_from(gram)] += RIDGE
    cond = np.linalg.cond(gram)
    if not cond < MAX_CONDITION:
        names = [labels[i] if labels else str(i) for i in np.nonzero(active)[0]]
        raise IllConditionedError(f"ill-conditioned active set {names} (cond {cond:.3g})")
    return np.linalg.solve(gram, cols.T @ targets)


def stlsq(features, targets, threshold: float = 0.05, max_iters: int = 20,
          labels: list[str] | None = None) -> np.ndarray:
    """Sequentially thresholded least squares.

    Fit on the active set, zero every coefficient under ``threshold`` and
    repeat until the active set stops changing.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    n, k = X.shape
    if n < k:
        raise ValueError(f"need at least {k} samples, got {n}")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    xi = np.zeros(k)
    active = np.ones(k, dtype=bool)
    for _ in range(max_iters):
        xi = np.zeros(k)
        if active.any():
            xi[active] = _solve(X, y, active, labels)
        keep = np.abs(xi) >= threshold
        xi[~keep] = 0.0
        if np.array_equal(keep, active):
            break
        active = keep
    return xi


@dataclass
class SindyResult:
    coefficients: np.ndarray
    selected: list[int]
    identified_basis: int
    gm_estimate: float
    stride: int
    threshold: float
    labels: list[str] = field(default_factory=list)
    n_boot: int = 0
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {"coefficients": self.coefficients, "selected": self.selected,
                "identified_basis": self.identified_basis,
                "identified_label": self.labels[self.identified_basis] if self.labels else "",
                "gm_estimate": self.gm_estimate, "stride": self.stride,
                "threshold": self.threshold, "n_boot": self.n_boot, "wall_time": self.wall_time}


def design(trajs, library: BasisLibrary, stride: int):
    """Feature matrix ``phi_i(r_j)`` and inward radial accelerations at stencil midpoints."""
    r, a_rad = radial_samples(trajs, stride)
    return np.asarray(library.features(r), dtype=float), a_rad


def sindy_fit(dataset: Dataset, stride: int = 10, threshold: float = 0.05, n_boot: int = 0,
              seed: int = 0, library: BasisLibrary | None = None, split: str = "train"
              ) -> SindyResult:
    """STLSQ on one split; with ``n_boot`` > 0, median of trajectory bootstraps."""
    start = time.perf_counter()
    library = library or BasisLibrary.default()
    labels = library.labels
    trajs = getattr(dataset, split)
    if not trajs:
        raise ValueError(f"dataset split {split!r} is empty")
    if n_boot > 0:
        rng = np.random.default_rng([seed, 3])
        blocks = [design([t], library, stride) for t in trajs]
        fits = []
        for _ in range(n_boot):
            pick = rng.integers(0, len(trajs), len(trajs))
            X = np.concatenate([blocks[i][0] for i in pick])
            y = np.concatenate([blocks[i][1] for i in pick])
            fits.append(stlsq(X, y, threshold, labels=labels))
        xi = np.median(np.array(fits), axis=0)
        xi[np.abs(xi) < threshold] = 0.0
    else:
        X, y = design(trajs, library, stride)
        xi = stlsq(X, y, threshold, labels=labels)
    idx = int(np.argmax(np.abs(xi)))
    return SindyResult(xi, [int(i) for i in np.nonzero(xi)[0]], idx, float(xi[idx]), stride,
                       threshold, labels, n_boot, time.perf_counter() - start)
