"""Anti-interference metrics for a target attribute against an interfering one.

Given 1-D target and interferer densities meeting at ``z*``, and a sampler
(the distribution actually drawn from), we report

* the surpass probability: sampler mass on the target's side of ``z*``
* the difference expectation: sampler-weighted integral of
  ``pi_target - pi_interferer`` over the same region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control import ControlSpec, controlled_sample, intersection_center_1d
from .flow import FlowModel, log_prob_all
from .priors import gaussian_cdf_1d, normal_pdf_1d


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class ExclusivePair:
    """Target, interferer and sampler as ``(mu, sigma)``; a sampler sigma of 0 is a point mass."""

    target: tuple
    interferer: tuple
    sampler: tuple | None = None

    def __post_init__(self):
        t = tuple(map(float, self.target))
        i = tuple(map(float, self.interferer))
        s = t if self.sampler is None else tuple(map(float, self.sampler))
        if not (t[1] > 0 and i[1] > 0 and s[1] >= 0):
            raise ValueError("target/interferer sigma must be > 0 and sampler sigma >= 0")
        if t == i:
            raise ValueError("target and interferer must differ")
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "interferer", i)
        object.__setattr__(self, "sampler", s)

    def with_sampler(self, mu, sigma) -> "ExclusivePair":
        return ExclusivePair(self.target, self.interferer, (mu, sigma))

    def crossing(self) -> float:
        return intersection_center_1d(self.target, self.interferer).z_hat

    @property
    def target_below(self) -> bool:
        """True when the target's winning region is ``(-inf, z*]``."""
        return self.target[0] <= self.interferer[0]


@dataclass(frozen=True)
class QuadratureConfig:
    """Composite Simpson on ``nodes`` points covering ``width`` sampler sigmas."""

    nodes: int = 20001
    width: float = 10.0

    def __post_init__(self):
        if self.nodes < 3 or self.nodes % 2 == 0:
            raise QuadratureError(f"Simpson's rule needs an odd node count >= 3, got {self.nodes}")
        if not self.width > 0:
            raise QuadratureError("quadrature width must be > 0")


def surpass_probability(pair: ExclusivePair) -> float:
    z_star = pair.crossing()
    mu, sigma = pair.sampler
    if sigma == 0:
        below = mu < z_star
        return float(below if pair.target_below else not below)
    p = gaussian_cdf_1d(mu, sigma, z_star)
    return p if pair.target_below else 1.0 - p


def _gap(pair, z):
    return normal_pdf_1d(z, *pair.target) - normal_pdf_1d(z, *pair.interferer)


def simpson(f_values, h):
    n = len(f_values)
    if n < 3 or n % 2 == 0:
        raise QuadratureError(f"Simpson's rule needs an odd node count >= 3, got {n}")
    return h / 3.0 * (f_values[0] + f_values[-1] + 4 * f_values[1:-1:2].sum() + 2 * f_values[2:-1:2].sum())


def difference_expectation(pair: ExclusivePair, quad: QuadratureConfig | None = None) -> float:
    quad = quad or QuadratureConfig()
    z_star = pair.crossing()
    mu, sigma = pair.sampler
    if sigma == 0:
        inside = (mu < z_star) == pair.target_below
        return float(_gap(pair, mu)) if inside else 0.0
    # integrand is negligible beyond `width` sampler sigmas
    lo, hi = mu - quad.width * sigma, mu + quad.width * sigma
    if pair.target_below:
        hi = min(hi, z_star)
    else:
        lo = max(lo, z_star)
    if hi <= lo:
        return 0.0
    z = np.linspace(lo, hi, quad.nodes)
    f = normal_pdf_1d(z, mu, sigma) * _gap(pair, z)
    return float(simpson(f, (hi - lo) / (quad.nodes - 1)))


@dataclass(frozen=True)
class SweepRow:
    param: float
    surpass_prob: float
    diff_expectation: float


def lambda_sweep(pair: ExclusivePair, lambdas, quad: QuadratureConfig | None = None) -> list[SweepRow]:
    """Rows for sampler ``N(mu_sampler, (lam * sigma_target)^2)`` at each ``lam``."""
    rows = []
    mu = pair.sampler[0]
    for lam in lambdas:
        lam = float(lam)
        if lam < 0 or not math.isfinite(lam):
            raise ValueError(f"lambda must be finite and >= 0, got {lam}")
        p = pair.with_sampler(mu, lam * pair.target[1])
        rows.append(SweepRow(lam, surpass_probability(p), difference_expectation(p, quad)))
    return rows


@dataclass(frozen=True)
class AlphaRow:
    param: float
    margin: float
    target_share: float


def alpha_sweep(model: FlowModel, target, other, alphas, lam=1.0, count=1000, rng=None) -> list[AlphaRow]:
    """Mean ``log p(x|target) - log p(x|other)`` of controlled samples at each weight.

    ``target_share`` is the fraction of samples the target attribute wins. No
    monotonicity in ``alpha`` is implied.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for a in (target, other):
        model.prior(a)
    cols = [model.attributes.index(a) for a in (target, other)]
    rows = []
    for alpha in alphas:
        alpha = float(alpha)
        spec = ControlSpec(((target, alpha), (other, 1.0 - alpha)), lam)
        x = controlled_sample(model, spec, count, rng)
        lp = log_prob_all(model, x)
        diff = lp[:, cols[0]] - lp[:, cols[1]]
        rows.append(AlphaRow(alpha, float(diff.mean()), float(np.mean(diff > 0))))
    return rows


def format_param(value: float) -> str:
    text = f"{value:.6f}".rstrip("0")
    return text + "0" if text.endswith(".") else text


def format_table(rows) -> str:
    """CSV text with a header; metric columns fixed at 3 decimals."""
    if not rows:
        raise ValueError("empty sweep")
    fields = list(rows[0].__dataclass_fields__)
    lines = [",".join(fields)]
    for r in rows:
        vals = [format_param(r.param)] + [f"{getattr(r, f):.3f}" for f in fields[1:]]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> list[float]:
    """``"1.0:0.0:0.1"`` (inclusive, either direction) or a comma list ``"1,0.5"``."""
    text = text.strip()
    if ":" not in text:
        try:
            vals = [float(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise ValueError(f"invalid grid {text!r}") from None
        if not vals:
            raise ValueError("empty grid")
        return vals
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must be start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ValueError(f"invalid grid {text!r}") from None
    if not step > 0:
        raise ValueError("grid step must be > 0")
    span = abs(stop - start) / step
    count = round(span)
    if abs(span - count) > 1e-9 * max(1.0, span):
        raise ValueError(f"step {step} does not divide the interval {start}..{stop}")
    sign = 1.0 if stop >= start else -1.0
    return [round(start + sign * k * step, 12) for k in range(count + 1)]
