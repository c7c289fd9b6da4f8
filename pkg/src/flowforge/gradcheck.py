"""Finite-difference checks of the analytic directional derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlation import CorrelationVolume, non_prior_init, non_prior_init_jvp
from .grid import bilinear_sample, bilinear_sample_jvp, grid_coord

FD_STEP = 1e-3
REL_TOL = 1e-4


@dataclass
class GradReport:
    name: str
    cases: int
    max_rel_error: float

    @property
    def passed(self):
        return self.max_rel_error < REL_TOL

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.cases} cases, max relative error {self.max_rel_error:.3e} (tol {REL_TOL:g})"


def _rel_error(analytic, numeric):
    denom = max(np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / denom)


def smooth_field(rng, h, w, c=3):
    y, x = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    out = np.zeros((h, w, c))
    for ch in range(c):
        a, b, p, q = rng.uniform(0.5, 3.0, size=4)
        out[..., ch] = np.sin(a * x + p) * np.cos(b * y + q) + rng.uniform(-1, 1) * x * y
    return out


def interior_flow(rng, h, w, out_shape, margin=0.05):
    """Random coordinates inside the lattice, at least ``margin`` pixels from any cell edge."""

    def axis(n):
        cell = rng.integers(0, n - 1, size=out_shape)
        frac = rng.uniform(margin, 1.0 - margin, size=out_shape)
        return grid_coord(cell + frac, n)

    return np.stack([axis(w), axis(h)], axis=-1)


def check_bilinear_sample(cases=50, size=8, seed=0) -> GradReport:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        field = smooth_field(rng, size, size)
        flow = interior_flow(rng, size, size, (size, size))
        tangent = rng.normal(size=flow.shape)
        analytic = bilinear_sample_jvp(field, flow, tangent)
        numeric = (bilinear_sample(field, flow + FD_STEP * tangent) - bilinear_sample(field, flow - FD_STEP * tangent)) / (
            2 * FD_STEP
        )
        worst = max(worst, _rel_error(analytic, numeric))
    return GradReport("bilinear_sample d/dflow", cases, worst)


def check_non_prior_init(cases=50, size=8, seed=0) -> GradReport:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        base = rng.normal(size=(size, size, size, size))
        tangent = rng.normal(size=base.shape)
        analytic = non_prior_init_jvp(CorrelationVolume((base,)), tangent)
        plus = non_prior_init(CorrelationVolume((base + FD_STEP * tangent,)))
        minus = non_prior_init(CorrelationVolume((base - FD_STEP * tangent,)))
        worst = max(worst, _rel_error(analytic, (plus - minus) / (2 * FD_STEP)))
    return GradReport("non_prior_init d/dvolume", cases, worst)


def run_all(cases=50, seed=0) -> list[GradReport]:
    return [check_bilinear_sample(cases, seed=seed), check_non_prior_init(cases, seed=seed)]
