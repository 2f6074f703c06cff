"""How closely the default-configuration model recovers known synthetic densities."""

import numpy as np

from priorflow.cli import main

from priorflow import generate_dataset
from priorflow.synthlab import synth_log_density


def test_held_out_nll_near_true_entropy(trained, scene):
    held_out = generate_dataset(scene, 20_000, seed=99)
    for dist in scene:
        if dist.kind != "gaussian_mixture":
            continue
        x = held_out.x[held_out.labels == dist.name]
        nll = -np.mean(trained.score_samples(x, dist.name))
        entropy = -np.mean(synth_log_density(dist, x))
        assert abs(nll - entropy) <= 0.3, (dist.name, nll, entropy)


def test_pointwise_agreement_with_true_density(trained, scene):
    held_out = generate_dataset(scene, 5000, seed=98)
    for dist in scene:
        x = held_out.x[held_out.labels == dist.name]
        gap = np.abs(trained.score_samples(x, dist.name) - synth_log_density(dist, x))
        assert gap.mean() <= 0.5, (dist.name, gap.mean())


def test_loss_trace_trends_down(trained):
    blocks = np.array(trained.loss_curve_).reshape(10, -1).mean(axis=1)
    assert np.all(np.diff(blocks) < 0)


def test_verify_command_passes_on_trained_model(trained, tmp_path):
    path = tmp_path / "trained.json"
    trained.save(path)
    report = tmp_path / "report.csv"
    assert main(["verify", "--model", str(path), "--out", str(report)]) == 0
    lines = report.read_text().splitlines()
    assert [l.split(",")[3] for l in lines[1:6]] == ["PASS"] * 5
    assert len([l for l in lines if l.startswith(("neg,", "pos,", "topic_a,", "topic_b,"))]) == 4
