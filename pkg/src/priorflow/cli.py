"""``priorflow`` command line: synth, train, sample, control, sweep, verify.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import flow, metrics, verify
from .control import ControlSpec, controlled_sample, extension_offset, parse_weights
from .estimator import PriorFlow
from .synthlab import DatasetError, default_scene, generate_dataset, load_dataset, save_dataset

TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "learning_rate": float, "seed": int, "prior_mode": str,
    "clip_norm": float, "n_layers": int, "hidden_width": int, "hidden_layers": int,
    "activation": str, "scale_clamp": float,
}


class DataError(click.ClickException):
    exit_code = 2


class VerificationFailed(click.ClickException):
    exit_code = 3


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise click.UsageError(f"{path}:{lineno}: expected key=value")
        if key not in TRAIN_KEYS:
            raise click.UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = TRAIN_KEYS[key](value.strip())
        except ValueError:
            raise click.UsageError(f"{path}:{lineno}: bad value for {key}") from None
    return out


def _log_config(command, cfg):
    click.echo(f"# {command} config: {json.dumps(cfg, sort_keys=True)}", err=True)


def _write(path, text):
    if path in (None, "-"):
        click.echo(text, nl=False)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _load_model(path):
    try:
        return flow.load_model(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load model: {exc}") from None


def _dataset_text(x, tag, header):
    lines = [f"# {header}"]
    lines += [json.dumps({"x": [float(v) for v in row], "attr": tag}) for row in x]
    return "\n".join(lines) + "\n"


@click.group()
def cli():
    """Controllable sampling through an invertible map to Gaussian priors."""


@cli.command()
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--dim", default=2, show_default=True, type=click.IntRange(min=2))
@click.option("--count", default=5000, show_default=True, type=click.IntRange(min=1),
              help="Points per attribute.")
@click.option("--seed", default=0, show_default=True, type=int)
def synth(out, dim, count, seed):
    """Write the default synthetic benchmark scene as a dataset file."""
    _log_config("synth", {"dim": dim, "count": count, "seed": seed})
    save_dataset(generate_dataset(default_scene(dim), count, seed), out)


@cli.command()
@click.option("--data", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "--model", "out", required=True, type=click.Path(dir_okay=False),
              help="Where to write the trained model.")
@click.option("--loss-out", type=click.Path(dir_okay=False),
              help="Loss trace CSV (default: <out>.loss.csv).")
@click.option("--config", type=click.Path(exists=True, dir_okay=False))
@click.option("--epochs", type=click.IntRange(min=1))
@click.option("--seed", type=int)
@click.option("--batch-size", type=click.IntRange(min=1))
@click.option("--lr", "learning_rate", type=float)
@click.option("--prior-mode", type=click.Choice(["learned", "fixed"]))
def train(data, out, loss_out, config, epochs, seed, batch_size, learning_rate, prior_mode):
    """Fit the flow and per-attribute priors to a labelled dataset."""
    cfg = PriorFlow().get_params()
    cfg["seed"] = cfg.pop("random_state")
    if config:
        cfg.update(read_config(config))
    flags = {"epochs": epochs, "seed": seed, "batch_size": batch_size,
             "learning_rate": learning_rate, "prior_mode": prior_mode}
    cfg.update({k: v for k, v in flags.items() if v is not None})
    _log_config("train", cfg)
    try:
        ds = load_dataset(data)
    except (OSError, DatasetError) as exc:
        raise DataError(str(exc)) from None
    params = dict(cfg)
    params["random_state"] = params.pop("seed")
    try:
        est = PriorFlow(**params).fit(ds.x, ds.labels)
    except (ValueError, FloatingPointError) as exc:
        raise DataError(f"training failed: {exc}") from None
    est.save(out)
    trace = "epoch,nll\n" + "".join(f"{i},{v:.6f}\n" for i, v in enumerate(est.loss_curve_))
    _write(loss_out or f"{out}.loss.csv", trace)
    click.echo(f"trained {len(est.classes_)} attributes, final nll {est.loss_curve_[-1]:.4f}", err=True)


def _run_control(model_path, weights, lam, offset, away_from, count, seed, out, command):
    model = _load_model(model_path)
    try:
        terms = parse_weights(weights)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--weights") from None
    unknown = [a for a, _ in terms if a not in model.priors]
    if unknown:
        raise DataError(f"unknown attribute {unknown[0]!r}; model has {model.attributes}")
    center = None
    if offset:
        lead = max(terms, key=lambda t: t[1])[0]
        if away_from is None:
            if len(terms) < 2:
                raise click.UsageError("--offset on a single attribute needs --away-from")
            away_from = min(terms, key=lambda t: t[1])[0]
        if away_from not in model.priors:
            raise DataError(f"unknown attribute {away_from!r}")
        try:
            center = extension_offset(model, lead, away_from, offset)
        except ValueError as exc:
            raise DataError(str(exc)) from None
    try:
        spec = ControlSpec(tuple(terms), lam, center)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--weights/--lambda") from None
    _log_config(command, {"model": model_path, "weights": spec.describe(), "lambda": lam,
                          "offset": offset, "away_from": away_from, "count": count, "seed": seed})
    x = controlled_sample(model, spec, count, np.random.default_rng(seed))
    header = f"priorflow {command} seed={seed} weights={spec.describe()} lambda={lam:g} offset={offset:g}"
    _write(out, _dataset_text(x, spec.describe(), header))


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--attr", required=True)
@click.option("--lambda", "lam", default=1.0, show_default=True, type=click.FloatRange(min=0))
@click.option("--count", default=100, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False))
def sample(model_path, attr, lam, count, seed, out):
    """Single-attribute sampling: z = mu + sigma * eps, eps ~ N(0, lambda^2 I)."""
    _run_control(model_path, attr, lam, 0.0, None, count, seed, out, "sample")


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--weights", required=True, help='e.g. "pos=0.7,neg=0.3"; must sum to 1.')
@click.option("--lambda", "lam", default=1.0, show_default=True, type=click.FloatRange(min=0))
@click.option("--offset", default=0.0, show_default=True, type=float,
              help="Shift of the sampling centre away from --away-from, in prior units.")
@click.option("--away-from", help="Interfering attribute (default: lowest-weighted term).")
@click.option("--count", default=100, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False))
def control(model_path, weights, lam, offset, away_from, count, seed, out):
    """Interpolated (and optionally extended) sampling over several attributes."""
    _run_control(model_path, weights, lam, offset, away_from, count, seed, out, "control")


def _pair_option(text, name):
    try:
        mu, sigma = (float(v) for v in text.split(","))
    except ValueError:
        raise click.BadParameter(f"expected mu,sigma, got {text!r}", param_hint=name) from None
    return mu, sigma


@cli.command()
@click.option("--kind", type=click.Choice(["lambda", "alpha"]), required=True)
@click.option("--grid", default="1.0:0.0:0.1", show_default=True,
              help="start:stop:step (inclusive) or comma list.")
@click.option("--out", type=click.Path(dir_okay=False))
@click.option("--target", default="0,1", show_default=True, help="lambda sweep: target mu,sigma.")
@click.option("--interferer", default="1.5,1", show_default=True, help="lambda sweep: interferer mu,sigma.")
@click.option("--offset", default=0.0, show_default=True, type=float,
              help="lambda sweep: sampler centre shift away from the interferer.")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), help="alpha sweep: model.")
@click.option("--pair", help="alpha sweep: target,other attribute names.")
@click.option("--lambda", "lam", default=1.0, show_default=True, type=click.FloatRange(min=0))
@click.option("--count", default=1000, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int)
def sweep(kind, grid, out, target, interferer, offset, model_path, pair, lam, count, seed):
    """Tabulate anti-interference metrics over lambda, or density margins over alpha."""
    try:
        values = metrics.parse_grid(grid)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--grid") from None
    if kind == "lambda":
        t, i = _pair_option(target, "--target"), _pair_option(interferer, "--interferer")
        _log_config("sweep", {"kind": kind, "grid": values, "target": t, "interferer": i, "offset": offset})
        try:
            base = metrics.ExclusivePair(t, i)
            shift = offset if base.target_below else -offset
            base = base.with_sampler(t[0] - shift, t[1])
            rows = metrics.lambda_sweep(base, values)
        except ValueError as exc:
            raise click.BadParameter(str(exc)) from None
        _write(out, metrics.format_table(rows))
        return
    if not model_path or not pair:
        raise click.UsageError("alpha sweep needs --model and --pair target,other")
    names = [p.strip() for p in pair.split(",")]
    if len(names) != 2:
        raise click.BadParameter("expected two attribute names", param_hint="--pair")
    model = _load_model(model_path)
    for a in names:
        if a not in model.priors:
            raise DataError(f"unknown attribute {a!r}; model has {model.attributes}")
    _log_config("sweep", {"kind": kind, "grid": values, "model": model_path, "pair": names,
                          "lambda": lam, "count": count, "seed": seed})
    rows = metrics.alpha_sweep(model, names[0], names[1], values, lam, count, np.random.default_rng(seed))
    _write(out, f"# priorflow sweep alpha seed={seed} pair={pair} lambda={lam:g}\n" + metrics.format_table(rows))


@cli.command("verify")
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--profile", type=click.Choice(sorted(verify.PROFILES)), default="default", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False))
def verify_cmd(model_path, profile, seed, out):
    """Run invertibility, Jacobian and prior/latent correspondence checks."""
    model = _load_model(model_path)
    _log_config("verify", {"model": model_path, "profile": profile, "seed": seed})
    results = verify.run_checks(model, profile, seed)
    report = "check,measured,tolerance,status,detail\n" + "".join(r.line() + "\n" for r in results)
    report += "\n" + verify.isotropy_table(model)
    _write(out, report)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationFailed(f"failed checks: {', '.join(failed)}")


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="priorflow", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
