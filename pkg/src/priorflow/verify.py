"""Executable checks of a trained model: invertibility, Jacobian, and the
prior/latent correspondence properties that make prior-space control valid."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .control import ControlSpec, controlled_sample, equal_density_point
from .flow import FlowModel, flow_forward, flow_inverse, log_prob_all
from .priors import gaussian_log_pdf, isotropy_stats, sample

PROFILES = {
    "default": {"roundtrip": 1e-6, "jacobian": 1e-3, "intersection": 1e-9},
    "loose": {"roundtrip": 1e-4, "jacobian": 1e-2, "intersection": 1e-6},
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name},{self.measured:.3e},{self.tolerance:.1e},{status},{self.detail}"


def numerical_jacobian(model: FlowModel, x, h=1e-5):
    """Central-difference Jacobian of the forward map at a single point."""
    x = np.asarray(x, dtype=float)
    n = x.size
    pts = np.concatenate([x + h * np.eye(n), x - h * np.eye(n)])
    z, _ = flow_forward(model, pts)
    return ((z[:n] - z[n:]) / (2 * h)).T


def jacobian_det_error(model: FlowModel, x, h=1e-5):
    """Relative error of ``exp(analytic log-det)`` against the finite-difference determinant."""
    x = np.atleast_2d(x)
    _, ld = flow_forward(model, x)
    errs = np.empty(len(x))
    for i, xi in enumerate(x):
        det_fd = abs(np.linalg.det(numerical_jacobian(model, xi, h)))
        errs[i] = abs(np.exp(ld[i]) - det_fd) / det_fd
    return errs


def prior_points(model: FlowModel, count, rng, lam=1.0):
    """``count`` prior-space points per attribute, stacked."""
    return np.concatenate([sample(model.priors[a], lam, rng, size=count) for a in model.attributes])


def check_roundtrip(model, rng, tol, count=250):
    x = flow_inverse(model, prior_points(model, count, rng))
    err = float(np.max(np.abs(flow_inverse(model, flow_forward(model, x)[0]) - x)))
    return CheckResult("invertibility", err, tol, err <= tol, f"{len(x)} points")


def check_jacobian(model, rng, tol, count=100):
    z = prior_points(model, max(1, count // len(model.attributes)), rng)[:count]
    errs = jacobian_det_error(model, flow_inverse(model, z))
    worst = float(errs.max())
    return CheckResult("jacobian", worst, tol, worst <= tol, f"{len(errs)} points")


def intersection_gaps(model: FlowModel):
    """Relative gap ``|p(x|a)/p(x|b) - 1|`` at the prior-space crossing of each attribute pair."""
    out = {}
    names = model.attributes
    for a, b in itertools.combinations(names, 2):
        hit = equal_density_point(model.priors[a], model.priors[b])
        if hit is None:
            continue
        x = flow_inverse(model, hit[0])
        lp = log_prob_all(model, x)[0]
        prior_gap = abs(gaussian_log_pdf(model.priors[a], hit[0]) - gaussian_log_pdf(model.priors[b], hit[0]))
        out[(a, b)] = (float(abs(np.expm1(lp[names.index(a)] - lp[names.index(b)]))), float(prior_gap))
    return out


def check_intersection(model, tol):
    gaps = intersection_gaps(model)
    if not gaps:
        return CheckResult("intersection_invertibility", 0.0, tol, True, "no crossing pairs")
    worst = max(g for g, _ in gaps.values())
    return CheckResult("intersection_invertibility", worst, tol, worst <= tol, f"{len(gaps)} pairs")


def inequality_mismatches(model: FlowModel, z):
    """Count of (point, pair) cases where prior and latent density orderings disagree."""
    x = flow_inverse(model, z)
    lat = log_prob_all(model, x)
    pri = np.stack([gaussian_log_pdf(model.priors[a], z) for a in model.attributes], axis=1)
    bad = total = 0
    for i, j in itertools.combinations(range(len(model.attributes)), 2):
        # log is monotone, so comparing log-densities avoids underflow
        s_prior = np.sign(pri[:, i] - pri[:, j])
        s_latent = np.sign(lat[:, i] - lat[:, j])
        bad += int(np.sum(s_prior != s_latent))
        total += len(z)
    return bad, total


def check_inequality(model, rng, count=1000):
    spread = prior_points(model, count, rng, lam=1.5)
    z = spread[rng.choice(len(spread), size=count, replace=False)]
    bad, total = inequality_mismatches(model, z)
    return CheckResult("inequality_maintenance", float(bad), 0.0, bad == 0, f"{total} comparisons")


def check_preservation(model, rng, count=200):
    worst = 0
    for a in model.attributes:
        x = controlled_sample(model, ControlSpec(((a, 1.0),), 1.0), count, rng)
        lp = log_prob_all(model, x)[:, model.attributes.index(a)]
        worst += int(np.sum(~np.isfinite(lp)))
    n = count * len(model.attributes)
    return CheckResult("attribute_preservation", float(worst), 0.0, worst == 0, f"{n} samples")


def run_checks(model: FlowModel, profile="default", seed=0) -> list[CheckResult]:
    tol = PROFILES[profile]
    rng = np.random.default_rng(seed)
    return [
        check_roundtrip(model, rng, tol["roundtrip"]),
        check_jacobian(model, rng, tol["jacobian"]),
        check_intersection(model, tol["intersection"]),
        check_inequality(model, rng),
        check_preservation(model, rng),
    ]


def isotropy_table(model: FlowModel) -> str:
    lines = ["attribute,max,min,avg,std"]
    lines += [isotropy_stats(model.priors[a]).row(a) for a in model.attributes]
    return "\n".join(lines) + "\n"
