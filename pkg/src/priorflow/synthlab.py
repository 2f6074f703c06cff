"""Synthetic latent spaces with exact densities, and labelled dataset I/O.

Each attribute gets a ground-truth distribution that is deliberately
non-Gaussian (skewed mixtures, curved bananas, arcs) so a trained flow has
something to straighten out, while its exact log-density stays available as
an oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import i0e, logsumexp

from .priors import LOG_2PI

KINDS = ("gaussian_mixture", "banana_warp", "ring_arc")
BALANCE_TOLERANCE = 0.10


class DatasetError(ValueError):
    """Malformed, inconsistent or unbalanced latent dataset."""


def _diag_logpdf(x, mean, std):
    u = (x - mean) / std
    return -0.5 * np.sum(u * u, axis=-1) - np.sum(np.log(std)) - 0.5 * len(std) * LOG_2PI


@dataclass
class AttributeDistribution:
    """Ground-truth latent distribution of one attribute.

    ``params`` by kind:

    * ``gaussian_mixture``: ``means`` (k, n), ``stds`` (k, n), ``weights`` (k,)
    * ``banana_warp``: base ``mean`` (n,), ``std`` (n,), ``curvature``; the
      warp is ``x1 = u1 + curvature * (u0 - mean0)**2`` (unit Jacobian)
    * ``ring_arc``: ``center`` (2,), ``radius``, ``radial_scale`` (log-normal
      radius), ``angle``, ``concentration`` (von Mises), ``extra_std`` for
      dimensions beyond the first two
    """

    name: str
    kind: str
    params: dict = field(default_factory=dict)
    dim: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        p = {k: (np.asarray(v, dtype=float) if isinstance(v, (list, tuple, np.ndarray)) else v)
             for k, v in self.params.items()}
        n = self.dim
        if self.kind == "gaussian_mixture":
            w = np.atleast_1d(p["weights"])
            if p["means"].shape != (len(w), n) or p["stds"].shape != (len(w), n):
                raise ValueError("mixture means/stds must have shape (components, dim)")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("mixture weights must be positive and sum to 1")
            if np.any(p["stds"] <= 0):
                raise ValueError("mixture stds must be > 0")
            p["weights"] = w
        elif self.kind == "banana_warp":
            if n < 2 or p["mean"].shape != (n,) or p["std"].shape != (n,) or np.any(p["std"] <= 0):
                raise ValueError("banana_warp needs dim >= 2 and positive (dim,) std")
            p["curvature"] = float(p["curvature"])
        else:
            if n < 2 or p["center"].shape != (2,):
                raise ValueError("ring_arc needs dim >= 2 and a 2-D center")
            for key in ("radius", "radial_scale", "concentration"):
                if not float(p[key]) > 0:
                    raise ValueError(f"ring_arc {key} must be > 0")
            p.setdefault("extra_std", 1.0)
        self.params = p

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"point of shape {x.shape} does not match dimension {self.dim}")
        p = self.params
        if self.kind == "gaussian_mixture":
            comp = np.stack([_diag_logpdf(x, m, s) for m, s in zip(p["means"], p["stds"])], axis=-1)
            return logsumexp(comp + np.log(p["weights"]), axis=-1)
        if self.kind == "banana_warp":
            u = np.array(x, copy=True)
            u[..., 1] = x[..., 1] - p["curvature"] * (x[..., 0] - p["mean"][0]) ** 2
            return _diag_logpdf(u, p["mean"], p["std"])
        d = x[..., :2] - p["center"]
        r = np.hypot(d[..., 0], d[..., 1])
        theta = np.arctan2(d[..., 1], d[..., 0])
        kappa = float(p["concentration"])
        # von Mises with the I0 normaliser taken in scaled form for large kappa
        log_vm = kappa * (np.cos(theta - p["angle"]) - 1.0) - math.log(2 * math.pi * i0e(kappa))
        with np.errstate(divide="ignore"):
            log_r = np.log(r)
        rho = log_r - math.log(p["radius"])
        s = float(p["radial_scale"])
        log_rad = -0.5 * (rho / s) ** 2 - math.log(s) - 0.5 * LOG_2PI
        with np.errstate(invalid="ignore"):
            out = log_vm + log_rad - 2.0 * log_r
        # the log-normal radius puts zero density at the centre itself
        out = np.where(r > 0, out, -np.inf)
        if self.dim > 2:
            out = out + _diag_logpdf(x[..., 2:], 0.0, np.full(self.dim - 2, p["extra_std"]))
        return out

    def sample(self, count, rng, return_components=False):
        count = int(count)
        p = self.params
        comps = None
        if self.kind == "gaussian_mixture":
            comps = rng.choice(len(p["weights"]), size=count, p=p["weights"])
            eps = rng.standard_normal((count, self.dim))
            x = p["means"][comps] + p["stds"][comps] * eps
        elif self.kind == "banana_warp":
            x = p["mean"] + p["std"] * rng.standard_normal((count, self.dim))
            x[:, 1] += p["curvature"] * (x[:, 0] - p["mean"][0]) ** 2
        else:
            theta = rng.vonmises(float(p["angle"]), float(p["concentration"]), size=count)
            r = p["radius"] * np.exp(p["radial_scale"] * rng.standard_normal(count))
            x = np.empty((count, self.dim))
            x[:, 0] = p["center"][0] + r * np.cos(theta)
            x[:, 1] = p["center"][1] + r * np.sin(theta)
            if self.dim > 2:
                x[:, 2:] = p["extra_std"] * rng.standard_normal((count, self.dim - 2))
        return (x, comps) if return_components else x


def synth_log_density(dist: AttributeDistribution, x):
    return dist.log_density(x)


def synth_sample(dist: AttributeDistribution, count, rng, return_components=False):
    return dist.sample(count, rng, return_components=return_components)


def default_scene(dim=2) -> list[AttributeDistribution]:
    """Two skewed, partially overlapping "sentiment" mixtures and two curved "topic" bananas."""
    if dim < 2:
        raise ValueError("the benchmark scene needs dim >= 2")

    def pad(v, fill):
        return list(v) + [fill] * (dim - 2)

    return [
        AttributeDistribution("neg", "gaussian_mixture", {
            "means": [pad((-1.6, 0.3), 0.0), pad((-0.9, -0.5), 0.0)],
            "stds": [pad((0.45, 0.5), 0.5), pad((0.35, 0.35), 0.5)],
            "weights": [0.65, 0.35],
        }, dim),
        AttributeDistribution("pos", "gaussian_mixture", {
            "means": [pad((1.6, 0.3), 0.0), pad((0.8, -0.6), 0.0)],
            "stds": [pad((0.4, 0.5), 0.5), pad((0.35, 0.3), 0.5)],
            "weights": [0.6, 0.4],
        }, dim),
        AttributeDistribution("topic_a", "banana_warp", {
            "mean": pad((0.0, 1.7), 0.0), "std": pad((0.7, 0.25), 0.5), "curvature": -0.35,
        }, dim),
        AttributeDistribution("topic_b", "banana_warp", {
            "mean": pad((0.0, -1.9), 0.0), "std": pad((0.7, 0.25), 0.5), "curvature": 0.35,
        }, dim),
    ]


@dataclass
class LatentDataset:
    """Labelled latent points ``x`` (N, n) with attribute names ``labels`` (N,)."""

    x: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.labels = np.asarray(self.labels, dtype=object)
        if self.x.ndim != 2 or self.x.shape[0] == 0:
            raise DatasetError("no records")
        if self.labels.shape != (self.x.shape[0],):
            raise DatasetError("one label per record required")
        if not np.all(np.isfinite(self.x)):
            raise DatasetError("non-finite values in dataset")
        counts = self.counts()
        hi, lo = max(counts.values()), min(counts.values())
        if (hi - lo) > BALANCE_TOLERANCE * hi:
            raise DatasetError(
                f"unbalanced attributes {counts}: per-attribute counts must agree within "
                f"{BALANCE_TOLERANCE:.0%}"
            )

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def attributes(self) -> list[str]:
        return sorted(set(self.labels.tolist()))

    def counts(self) -> dict[str, int]:
        names, counts = np.unique(self.labels.astype(str), return_counts=True)
        return dict(zip(names.tolist(), counts.tolist()))

    def __len__(self):
        return self.x.shape[0]


def generate_dataset(dists, per_attr_count, seed=0, shuffle=True) -> LatentDataset:
    rng = np.random.default_rng(seed)
    dims = {d.dim for d in dists}
    if len(dims) != 1:
        raise ValueError(f"distributions disagree on dimension: {sorted(dims)}")
    xs = [d.sample(per_attr_count, rng) for d in dists]
    labels = np.concatenate([np.full(per_attr_count, d.name, dtype=object) for d in dists])
    x = np.concatenate(xs)
    if shuffle:
        order = rng.permutation(len(x))
        x, labels = x[order], labels[order]
    return LatentDataset(x, labels)


def save_dataset(ds: LatentDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, a in zip(ds.x, ds.labels):
            fh.write(json.dumps({"x": [float(v) for v in x], "attr": str(a)}) + "\n")


def load_dataset(path) -> LatentDataset:
    xs, labels, dim = [], [], None
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
                x = [float(v) for v in rec["x"]]
                attr = rec["attr"]
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"line {lineno}: malformed record ({exc})") from None
            if not isinstance(attr, str) or not attr:
                raise DatasetError(f"line {lineno}: attr must be a non-empty string")
            if dim is None:
                dim = len(x)
                if dim == 0:
                    raise DatasetError(f"line {lineno}: empty vector")
            elif len(x) != dim:
                raise DatasetError(f"line {lineno}: expected dimension {dim}, got {len(x)}")
            if not all(math.isfinite(v) for v in x):
                raise DatasetError(f"line {lineno}: non-finite value")
            xs.append(x)
            labels.append(attr)
    if not xs:
        raise DatasetError("no records")
    return LatentDataset(np.array(xs), np.array(labels, dtype=object))
