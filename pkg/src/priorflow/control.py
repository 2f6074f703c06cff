"""Control in prior space: interpolation, intersection centres, shifted sampling.

Everything here operates on the diagonal Gaussian priors; results reach the
latent space only through ``flow_inverse``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .flow import FlowModel, flow_inverse
from .priors import DiagonalGaussian, normal_pdf_1d, sample

WEIGHT_SUM_TOL = 1e-9

EQUAL_VARIANCE = "equal_variance"
TWO_ROOTS = "two_roots"
NO_ROOT_IN_INTERVAL = "no_root_in_interval"


@dataclass(frozen=True)
class ControlSpec:
    """Attribute weights (may fall outside [0, 1] but must sum to 1), noise scale and
    an optional shift of the sampling centre."""

    terms: tuple
    lam: float = 1.0
    center_offset: np.ndarray | None = None

    def __post_init__(self):
        terms = tuple((str(a), float(w)) for a, w in self.terms)
        if not terms:
            raise ValueError("a control spec needs at least one attribute term")
        names = [a for a, _ in terms]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute in control spec: {names}")
        total = math.fsum(w for _, w in terms)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        object.__setattr__(self, "terms", terms)
        if self.center_offset is not None:
            off = np.atleast_1d(np.asarray(self.center_offset, dtype=float))
            if not np.all(np.isfinite(off)):
                raise ValueError("center offset must be finite")
            object.__setattr__(self, "center_offset", off)

    @property
    def attributes(self):
        return [a for a, _ in self.terms]

    @property
    def weights(self):
        return [w for _, w in self.terms]

    def describe(self) -> str:
        return ",".join(f"{a}={w:g}" for a, w in self.terms)


def parse_weights(text: str) -> list[tuple[str, float]]:
    """``"pos=0.7,neg=0.3"`` -> ``[("pos", 0.7), ("neg", 0.3)]``.

    A bare attribute name means weight 1.
    """
    terms = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            name, _, value = part.partition("=")
            try:
                weight = float(value)
            except ValueError:
                raise ValueError(f"bad weight {value!r} for attribute {name.strip()!r}") from None
        else:
            name, weight = part, 1.0
        if not name.strip():
            raise ValueError(f"missing attribute name in {part!r}")
        terms.append((name.strip(), weight))
    if not terms:
        raise ValueError("empty weight specification")
    return terms


def interpolate_distribution(priors, weights) -> DiagonalGaussian:
    """Law of ``sum_i w_i z_i`` for independent ``z_i ~ priors[i]``."""
    priors = list(priors)
    weights = [float(w) for w in weights]
    if len(priors) != len(weights) or not priors:
        raise ValueError("need one weight per prior")
    if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"weights must sum to 1, got {math.fsum(weights)!r}")
    dims = {g.dim for g in priors}
    if len(dims) != 1:
        raise ValueError(f"priors disagree on dimension: {sorted(dims)}")
    mean = sum(w * g.mean for w, g in zip(weights, priors))
    var = sum((w * g.std) ** 2 for w, g in zip(weights, priors))
    if np.any(var <= 0):
        raise ValueError("interpolated variance vanishes; every weighted std is zero in some dimension")
    return DiagonalGaussian(mean, np.sqrt(var))


@dataclass(frozen=True)
class IntersectionResult:
    z_hat: float
    alpha_star: float
    case: str
    both_roots: tuple | None = None
    discriminant: float = float("nan")


def quadratic_coefficients(mu_a, sigma_a, mu_b, sigma_b):
    """``A z^2 + B z + C = 0`` holds exactly where the two 1-D densities meet."""
    va, vb = sigma_a**2, sigma_b**2
    a = -1.0 / va + 1.0 / vb
    b = 2.0 * (mu_a / va - mu_b / vb)
    c = math.log(vb / va) - mu_a**2 / va + mu_b**2 / vb
    return a, b, c


def discriminant(mu_a, sigma_a, mu_b, sigma_b):
    """``B^2 - 4AC`` in its factored, manifestly non-negative form."""
    va, vb = sigma_a**2, sigma_b**2
    return 4.0 / (va * vb) * ((mu_a - mu_b) ** 2 + (va - vb) * math.log(va / vb))


def intersection_center_1d(g_a, g_b) -> IntersectionResult:
    """Where ``N(mu_a, sigma_a)`` and ``N(mu_b, sigma_b)`` have equal density.

    ``g_a`` and ``g_b`` are ``(mu, sigma)`` pairs. With unequal sigmas the root
    lying between the means is chosen; if neither does, the result reports
    ``no_root_in_interval`` with the midpoint as fallback and both roots attached.
    """
    (mu_a, s_a), (mu_b, s_b) = (tuple(map(float, g_a)), tuple(map(float, g_b)))
    if not (s_a > 0 and s_b > 0):
        raise ValueError("standard deviations must be > 0")
    if mu_a == mu_b and s_a == s_b:
        raise ValueError("identical distributions intersect everywhere")

    def alpha_of(z):
        return 0.5 if mu_a == mu_b else (z - mu_b) / (mu_a - mu_b)

    if s_a == s_b:
        z = 0.5 * (mu_a + mu_b)
        return IntersectionResult(z, alpha_of(z), EQUAL_VARIANCE, None, discriminant(mu_a, s_a, mu_b, s_b))

    a, b, c = quadratic_coefficients(mu_a, s_a, mu_b, s_b)
    delta = discriminant(mu_a, s_a, mu_b, s_b)
    # cancellation-free pair of roots
    q = -0.5 * (b + math.copysign(math.sqrt(delta), b))
    roots = sorted((q / a, c / q)) if q != 0 else sorted((math.sqrt(delta) / (2 * a), -math.sqrt(delta) / (2 * a)))
    lo, hi = min(mu_a, mu_b), max(mu_a, mu_b)
    inside = [r for r in roots if lo <= r <= hi]
    if not inside:
        z = 0.5 * (mu_a + mu_b)
        return IntersectionResult(z, 0.5, NO_ROOT_IN_INTERVAL, tuple(roots), delta)
    z = max(inside, key=lambda r: float(normal_pdf_1d(r, mu_a, s_a)))
    return IntersectionResult(z, alpha_of(z), TWO_ROOTS, tuple(roots), delta)


def projected_std(g: DiagonalGaussian, direction) -> float:
    """Std of ``g`` along a unit ``direction``."""
    return float(np.sqrt(np.sum((direction * g.std) ** 2)))


def intersection_alpha(g_a: DiagonalGaussian, g_b: DiagonalGaussian, return_result=False):
    """Weight ``alpha*`` such that ``alpha* mu_a + (1 - alpha*) mu_b`` is the intersection centre.

    Both priors are projected onto the line through their means and the 1-D
    problem is solved there. The projected densities agree at the result; the
    full n-D densities agree too in 1-D or when both priors share one isotropic
    std (see ``equal_density_point`` for the exact n-D crossing). Falls back to
    0.5 when the projected densities do not cross between the means.
    """
    d = g_b.mean - g_a.mean
    length = float(np.linalg.norm(d))
    if length == 0:
        raise ValueError("coincident means: the interpolation line is undefined")
    u = d / length
    res = intersection_center_1d((0.0, projected_std(g_a, u)), (length, projected_std(g_b, u)))
    alpha = 0.5 if res.case == NO_ROOT_IN_INTERVAL else 1.0 - res.z_hat / length
    return (alpha, res) if return_result else alpha


def equal_density_point(g_a: DiagonalGaussian, g_b: DiagonalGaussian):
    """Point ``z`` on the segment between the means where the full n-D densities agree.

    Restricted to the line ``mu_a + t (mu_b - mu_a)`` each log-density is a
    quadratic in ``t``, so the crossing is solved in closed form. Returns
    ``(z, t)``, or ``None`` when the densities do not cross on the segment.
    """
    d = g_b.mean - g_a.mean
    pa = float(np.sum((d / g_a.std) ** 2))
    pb = float(np.sum((d / g_b.std) ** 2))
    if pa == 0:
        raise ValueError("coincident means")
    ka = -float(np.sum(np.log(g_a.std)))
    kb = -float(np.sum(np.log(g_b.std)))
    # 0.5 (pb - pa) t^2 - pb t + (0.5 pb + ka - kb) = 0
    qa, qb, qc = 0.5 * (pb - pa), -pb, 0.5 * pb + ka - kb
    if qa == 0:
        roots = [-qc / qb]
    else:
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            return None
        q = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
        roots = [q / qa, qc / q] if q != 0 else [-qb / (2 * qa)]
    inside = [t for t in roots if 0.0 <= t <= 1.0]
    if not inside:
        return None
    t = max(inside, key=lambda r: ka - 0.5 * pa * r * r)
    return g_a.mean + t * d, t


def extension_offset(model: FlowModel, target, away_from, magnitude=0.2):
    """Shift of ``magnitude`` prior-space units pointing from ``away_from``'s mean to ``target``'s."""
    d = model.prior(target).mean - model.prior(away_from).mean
    norm = float(np.linalg.norm(d))
    if norm == 0:
        raise ValueError(f"{target!r} and {away_from!r} share a mean; no direction to extend along")
    return magnitude * d / norm


def control_distribution(model: FlowModel, spec: ControlSpec) -> DiagonalGaussian:
    priors = [model.prior(a) for a in spec.attributes]
    g = interpolate_distribution(priors, spec.weights)
    if spec.center_offset is not None:
        if spec.center_offset.shape != (model.dim,):
            raise ValueError(f"offset has shape {spec.center_offset.shape}, expected ({model.dim},)")
        g = DiagonalGaussian(g.mean + spec.center_offset, g.std)
    return g


def controlled_sample(model: FlowModel, spec: ControlSpec, count, rng, return_prior=False):
    """Sample the controlled prior-space distribution and map it to latent space."""
    if len(spec.terms) > model.dim + 1:
        warnings.warn(
            f"{len(spec.terms)} attributes exceed dim + 1 = {model.dim + 1}; their equal-density "
            "set may be empty",
            stacklevel=2,
        )
    g = control_distribution(model, spec)
    z = sample(g, spec.lam, rng, size=int(count))
    x = flow_inverse(model, z)
    return (x, z) if return_prior else x
