"""Affine-coupling normalizing flow with per-attribute diagonal Gaussian priors.

The flow ``z = F(x)`` is shared by every attribute; each attribute ``a`` owns a
prior ``N(mu_a, diag(sigma_a^2))`` in z-space, so

    log p(x | a) = log N(F(x); mu_a, sigma_a) + log |det dF/dx|.

Because the Jacobian term does not depend on ``a``, density comparisons
between attributes are identical in latent and prior space.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .numerics import MlpParams, init_mlp
from .priors import DiagonalGaussian, gaussian_log_pdf, LOG_2PI
from .synthlab import LatentDataset

logger = logging.getLogger(__name__)

FORMAT_NAME = "priorflow-model"
FORMAT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


class UnknownAttributeError(KeyError):
    def __str__(self):
        return f"unknown attribute {self.args[0]!r}"


@dataclass
class CouplingLayer:
    """``y[~mask] = x[~mask] * exp(s(x[mask])) + t(x[mask])``; ``y[mask] = x[mask]``.

    ``s`` is squashed to ``clamp * tanh(raw / clamp)``.
    """

    mask: np.ndarray
    scale_net: MlpParams
    translate_net: MlpParams
    scale_clamp: float = 2.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        n_pass = int(self.mask.sum())
        n_trans = self.mask.size - n_pass
        if n_pass == 0 or n_trans == 0:
            raise ValueError("mask needs at least one pass-through and one transformed entry")
        for net in (self.scale_net, self.translate_net):
            w = net.layer_widths
            if w[0] != n_pass or w[-1] != n_trans:
                raise ValueError(f"subnet widths {w} do not fit mask with {n_pass}/{n_trans} split")
        if not self.scale_clamp > 0:
            raise ValueError("scale_clamp must be > 0")

    @property
    def dim(self):
        return self.mask.size

    def arrays(self):
        return self.scale_net.arrays() + self.translate_net.arrays()


@dataclass
class FlowModel:
    dim: int
    layers: list[CouplingLayer]
    priors: dict[str, DiagonalGaussian] = field(default_factory=dict)

    def __post_init__(self):
        if not self.priors:
            raise ValueError("at least one attribute prior must be registered")
        for layer in self.layers:
            if layer.dim != self.dim:
                raise ValueError(f"layer dimension {layer.dim} != flow dimension {self.dim}")
        for name, g in self.priors.items():
            if g.dim != self.dim:
                raise ValueError(f"prior {name!r} has dimension {g.dim}, expected {self.dim}")

    @property
    def attributes(self) -> list[str]:
        return list(self.priors)

    def prior(self, attr) -> DiagonalGaussian:
        try:
            return self.priors[attr]
        except KeyError:
            raise UnknownAttributeError(attr) from None


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    prior_mode: str = "learned"
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.prior_mode not in ("fixed", "learned"):
            raise ValueError(f"prior_mode must be 'fixed' or 'learned', got {self.prior_mode!r}")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0 (0 disables clipping)")


def alternating_masks(dim, count):
    if dim < 2:
        raise ValueError("coupling flows need dim >= 2")
    even = np.arange(dim) % 2 == 0
    return [even.copy() if k % 2 == 0 else ~even for k in range(count)]


def build_flow(dim, attributes, n_layers=6, hidden=(64, 64), activation="tanh",
               scale_clamp=2.0, seed=0, identity_init=True) -> FlowModel:
    """Fresh flow with standard-normal priors for ``attributes``.

    ``identity_init`` zeroes the last layer of every subnet so the flow starts
    as the identity map.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for mask in alternating_masks(dim, n_layers):
        n_pass = int(mask.sum())
        widths = [n_pass, *hidden, dim - n_pass]
        s = init_mlp(widths, rng, activation, zero_last=identity_init)
        t = init_mlp(widths, rng, activation, zero_last=identity_init)
        layers.append(CouplingLayer(mask, s, t, scale_clamp))
    priors = {a: DiagonalGaussian(np.zeros(dim), np.ones(dim)) for a in attributes}
    return FlowModel(dim, layers, priors)


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x2, single


def _check_finite(arr, layer_index, direction):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite {direction} output at coupling layer {layer_index}")


def _scale_shift(layer, x_pass):
    raw, s_pre, s_post = numerics._forward_cache(layer.scale_net, x_pass)
    t, t_pre, t_post = numerics._forward_cache(layer.translate_net, x_pass)
    c = layer.scale_clamp
    th = np.tanh(raw / c)
    return c * th, t, (th, s_pre, s_post, t_pre, t_post)


def _coupling_fwd(layer, x2, index=0):
    m = layer.mask
    x_pass, x_trans = x2[:, m], x2[:, ~m]
    s, t, nets = _scale_shift(layer, x_pass)
    es = np.exp(s)
    y = np.empty_like(x2)
    y[:, m] = x_pass
    y[:, ~m] = x_trans * es + t
    log_det = s.sum(axis=1)
    _check_finite(y, index, "forward")
    return y, log_det, (x_pass, x_trans, es, nets)


def _coupling_inv(layer, z2, index=0):
    m = layer.mask
    z_pass = z2[:, m]
    s, t, _ = _scale_shift(layer, z_pass)
    x = np.empty_like(z2)
    x[:, m] = z_pass
    x[:, ~m] = (z2[:, ~m] - t) * np.exp(-s)
    _check_finite(x, index, "inverse")
    return x, -s.sum(axis=1)


def coupling_forward(layer: CouplingLayer, x, index=0):
    """Returns ``(z, log_det)``; batched input gives a ``(N,)`` log-det vector."""
    x2, single = _as_batch(x, layer.dim)
    y, ld, _ = _coupling_fwd(layer, x2, index)
    return (y[0], float(ld[0])) if single else (y, ld)


def coupling_inverse(layer: CouplingLayer, z, index=0):
    """Exact inverse; the log-det returned is that of the inverse map."""
    z2, single = _as_batch(z, layer.dim)
    x, ld = _coupling_inv(layer, z2, index)
    return (x[0], float(ld[0])) if single else (x, ld)


def flow_forward(model: FlowModel, x):
    x2, single = _as_batch(x, model.dim)
    ld = np.zeros(x2.shape[0])
    for k, layer in enumerate(model.layers):
        x2, d, _ = _coupling_fwd(layer, x2, k)
        ld = ld + d
    return (x2[0], float(ld[0])) if single else (x2, ld)


def flow_inverse(model: FlowModel, z, return_log_det=False):
    z2, single = _as_batch(z, model.dim)
    ld = np.zeros(z2.shape[0])
    for k in range(len(model.layers) - 1, -1, -1):
        z2, d = _coupling_inv(model.layers[k], z2, k)
        ld = ld + d
    x = z2[0] if single else z2
    if return_log_det:
        return x, (float(ld[0]) if single else ld)
    return x


def log_prob(model: FlowModel, attr, x):
    """``log p(x | attr)`` by change of variables."""
    g = model.prior(attr)
    z, ld = flow_forward(model, x)
    return gaussian_log_pdf(g, z) + ld


def log_prob_all(model: FlowModel, x):
    """Log densities for every attribute, shape ``(N, n_attributes)``, one flow pass."""
    x2, _ = _as_batch(x, model.dim)
    z, ld = flow_forward(model, x2)
    return np.stack([gaussian_log_pdf(model.priors[a], z) + ld for a in model.attributes], axis=1)


# ---------------------------------------------------------------- training


def _prior_arrays(model):
    mu = np.stack([model.priors[a].mean for a in model.attributes])
    log_sigma = np.log(np.stack([model.priors[a].std for a in model.attributes]))
    return mu, log_sigma


def _layer_arrays(model):
    return [arr for layer in model.layers for arr in layer.arrays()]


def _nll_grads(model, mu, log_sigma, x2, idx):
    """Mean NLL and gradients ordered as ``_layer_arrays(model) + [mu, log_sigma]``."""
    n = x2.shape[0]
    caches = []
    h = x2
    ld = np.zeros(n)
    for k, layer in enumerate(model.layers):
        h, d, cache = _coupling_fwd(layer, h, k)
        ld += d
        caches.append(cache)
    sig = np.exp(log_sigma)
    u = (h - mu[idx]) / sig[idx]
    log_pi = -0.5 * np.sum(u * u, axis=1) - np.sum(log_sigma[idx], axis=1) - 0.5 * model.dim * LOG_2PI
    loss = -float(np.mean(log_pi + ld))

    g = u / sig[idx] / n
    g_ld = -1.0 / n
    g_mu = np.zeros_like(mu)
    g_ls = np.zeros_like(log_sigma)
    np.add.at(g_mu, idx, -g)
    np.add.at(g_ls, idx, (1.0 - u * u) / n)

    layer_grads = []
    for layer, (x_pass, x_trans, es, nets) in zip(reversed(model.layers), reversed(caches)):
        th, s_pre, s_post, t_pre, t_post = nets
        m = layer.mask
        g_trans = g[:, ~m]
        g_s = g_trans * x_trans * es + g_ld
        g_raw = g_s * (1.0 - th * th)
        ds, gx_s = numerics._backward(layer.scale_net, s_pre, s_post, g_raw)
        dt, gx_t = numerics._backward(layer.translate_net, t_pre, t_post, g_trans)
        g_new = np.empty_like(g)
        g_new[:, m] = g[:, m] + gx_s + gx_t
        g_new[:, ~m] = g_trans * es
        g = g_new
        layer_grads.append(ds.arrays() + dt.arrays())
    flat = [arr for grads in reversed(layer_grads) for arr in grads]
    return loss, flat + [g_mu, g_ls]


def _label_index(model, labels):
    lookup = {a: i for i, a in enumerate(model.attributes)}
    try:
        return np.array([lookup[a] for a in labels], dtype=int)
    except KeyError as exc:
        raise UnknownAttributeError(exc.args[0]) from None


def nll(model: FlowModel, x, labels) -> float:
    """Mean negative log-likelihood of labelled points."""
    x2, _ = _as_batch(x, model.dim)
    idx = _label_index(model, labels)
    lp = log_prob_all(model, x2)
    return -float(np.mean(lp[np.arange(len(idx)), idx]))


def parameter_vector(model: FlowModel, prior_mode="learned") -> np.ndarray:
    arrays = _layer_arrays(model)
    if prior_mode == "learned":
        arrays = arrays + list(_prior_arrays(model))
    return np.concatenate([a.ravel() for a in arrays])


def with_parameter_vector(model: FlowModel, vec, prior_mode="learned") -> FlowModel:
    new = copy_model(model)
    arrays = _layer_arrays(new)
    mu, log_sigma = _prior_arrays(new)
    if prior_mode == "learned":
        arrays = arrays + [mu, log_sigma]
    vec = np.asarray(vec, dtype=float)
    pos = 0
    for a in arrays:
        a[...] = vec[pos:pos + a.size].reshape(a.shape)
        pos += a.size
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size} entries, model needs {pos}")
    if prior_mode == "learned":
        _set_priors(new, mu, log_sigma)
    return new


def nll_and_grad(model: FlowModel, x, labels, prior_mode="learned"):
    """Mean NLL and its gradient, flattened in ``parameter_vector`` order."""
    x2, _ = _as_batch(x, model.dim)
    idx = _label_index(model, labels)
    mu, log_sigma = _prior_arrays(model)
    loss, grads = _nll_grads(model, mu, log_sigma, x2, idx)
    if prior_mode != "learned":
        grads = grads[:-2]
    return loss, np.concatenate([g.ravel() for g in grads])


def _set_priors(model, mu, log_sigma):
    for i, a in enumerate(model.attributes):
        model.priors[a] = DiagonalGaussian(mu[i].copy(), np.exp(log_sigma[i]))


def copy_model(model: FlowModel) -> FlowModel:
    layers = [
        CouplingLayer(l.mask.copy(), l.scale_net.copy(), l.translate_net.copy(), l.scale_clamp)
        for l in model.layers
    ]
    priors = {a: DiagonalGaussian(g.mean.copy(), g.std.copy()) for a, g in model.priors.items()}
    return FlowModel(model.dim, layers, priors)


def _stratified_batches(idx_by_attr, batch_size, rng):
    per_attr = max(1, batch_size // len(idx_by_attr))
    perms = [rng.permutation(ix) for ix in idx_by_attr]
    n_batches = math.ceil(min(len(p) for p in perms) / per_attr)
    for b in range(n_batches):
        yield np.concatenate([p[b * per_attr:(b + 1) * per_attr] for p in perms])


def train(model: FlowModel, dataset: LatentDataset, cfg: TrainConfig | None = None):
    """Maximum-likelihood fit of the shared flow (and priors, when learned).

    Returns a new trained model and the per-epoch mean training NLL. Each
    mini-batch draws the same number of points from every attribute.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.dim != model.dim:
        raise ValueError(f"dataset dimension {dataset.dim} != model dimension {model.dim}")
    unknown = set(dataset.attributes) - set(model.attributes)
    if unknown:
        raise UnknownAttributeError(sorted(unknown)[0])
    model = copy_model(model)
    rng = np.random.default_rng(cfg.seed)
    idx = _label_index(model, dataset.labels)
    present = sorted(set(idx.tolist()))
    idx_by_attr = [np.flatnonzero(idx == i) for i in present]

    mu, log_sigma = _prior_arrays(model)
    params = _layer_arrays(model)
    learned = cfg.prior_mode == "learned"
    if learned:
        params = params + [mu, log_sigma]
    opt = numerics.Adam(lr=cfg.learning_rate)
    trace = []
    for epoch in range(cfg.epochs):
        losses = []
        for batch in _stratified_batches(idx_by_attr, cfg.batch_size, rng):
            loss, grads = _nll_grads(model, mu, log_sigma, dataset.x[batch], idx[batch])
            if not learned:
                grads = grads[:-2]
            numerics.clip_by_global_norm(grads, cfg.clip_norm)
            if opt.step(params, grads):
                losses.append(loss)
        trace.append(float(np.mean(losses)) if losses else float("nan"))
        logger.debug("epoch %d nll %.4f", epoch, trace[-1])
    _set_priors(model, mu, log_sigma)
    return model, trace


# ------------------------------------------------------------ serialization


def model_to_dict(model: FlowModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dim": model.dim,
        "layers": [
            {
                "mask": layer.mask.astype(int).tolist(),
                "scale_clamp": layer.scale_clamp,
                "scale_net": _net_to_dict(layer.scale_net),
                "translate_net": _net_to_dict(layer.translate_net),
            }
            for layer in model.layers
        ],
        "priors": [
            {"attr": a, "mean": g.mean.tolist(), "std": g.std.tolist()}
            for a, g in model.priors.items()
        ],
    }


def _net_to_dict(net: MlpParams):
    return {
        "activation": net.activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_dict(d):
    return MlpParams(
        [np.array(w, dtype=float).reshape(len(w), -1) for w in d["weights"]],
        [np.array(b, dtype=float) for b in d["biases"]],
        d["activation"],
    )


def model_from_dict(d: dict) -> FlowModel:
    if d.get("format") != FORMAT_NAME:
        raise ValueError("not a priorflow model document")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('version')}")
    layers = [
        CouplingLayer(
            np.array(l["mask"], dtype=bool),
            _net_from_dict(l["scale_net"]),
            _net_from_dict(l["translate_net"]),
            float(l["scale_clamp"]),
        )
        for l in d["layers"]
    ]
    priors = {p["attr"]: DiagonalGaussian(p["mean"], p["std"]) for p in d["priors"]}
    return FlowModel(int(d["dim"]), layers, priors)


def dumps_model(model: FlowModel, **extra) -> str:
    doc = model_to_dict(model)
    if extra:
        doc["meta"] = extra
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_model(model: FlowModel, path, **extra) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(model, **extra))


def load_model(path, with_meta=False):
    """Read a model document; ``with_meta`` also returns its free-form ``meta`` dict."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"cannot parse model file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ValueError(f"{path} is not a model document")
    try:
        model = model_from_dict(doc)
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"incomplete model file {path}: missing {exc}") from None
    return (model, doc.get("meta", {})) if with_meta else model
