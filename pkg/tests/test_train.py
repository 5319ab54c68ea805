import json
from dataclasses import replace

import numpy as np
import pytest

from ivgaze.errors import DataError, DivergenceDetected, EmptySet
from ivgaze.model import PixelStats, forward, init_params, loss_total
from ivgaze.model.gazedptr import backward
from ivgaze.model.train import TrainConfig, evaluate_batch, fit, load_checkpoint, predict, save_checkpoint


@pytest.fixture(scope="module")
def short_run(small_batch, tiny_cfg):
    P0 = init_params(tiny_cfg, 0)
    return P0, fit(small_batch, P0, tiny_cfg, TrainConfig(lr=0.005, epochs=3, batch_size=4, seed=2))


def test_zero_learning_rate_keeps_params(small_batch, tiny_cfg):
    P0 = init_params(tiny_cfg, 0)
    P, curve = fit(small_batch, P0, tiny_cfg, TrainConfig(lr=0.0, epochs=2, batch_size=3))
    assert np.array_equal(P.flat, P0.flat)
    assert curve.loss == [curve.initial_loss] * 2


def test_fit_leaves_input_untouched(short_run, tiny_cfg):
    P0, _ = short_run
    assert np.array_equal(P0.flat, init_params(tiny_cfg, 0).flat)


def test_single_step_descends(small_batch, tiny_cfg):
    one = small_batch.subset(slice(0, 1))
    P = init_params(tiny_cfg, 4)
    out = forward(one, P, tiny_cfg)
    before = loss_total(out, one, tiny_cfg)
    G = backward(out, one, P, tiny_cfg)
    step = P.copy()
    step.flat -= 1e-4 * G.flat
    assert loss_total(forward(one, step, tiny_cfg), one, tiny_cfg) < before


def test_curve_is_deterministic(short_run, small_batch, tiny_cfg):
    P0, (P1, c1) = short_run
    P2, c2 = fit(small_batch, P0, tiny_cfg, TrainConfig(lr=0.005, epochs=3, batch_size=4, seed=2))
    assert c1.loss == c2.loss and c1.error_deg == c2.error_deg
    assert np.array_equal(P1.flat, P2.flat)


def test_curve_shape(short_run):
    _, (_, curve) = short_run
    assert len(curve.loss) == len(curve.error_deg) == 3
    assert np.isfinite(curve.initial_loss) and 0 <= curve.initial_error_deg <= 180
    assert json.loads(json.dumps(curve.to_dict()))["loss"] == curve.loss


def test_divergence_detected(small_batch, tiny_cfg):
    with pytest.raises(DivergenceDetected), np.errstate(all="ignore"):
        fit(small_batch, init_params(tiny_cfg, 0), tiny_cfg, TrainConfig(lr=1e200, epochs=1, batch_size=6))


def test_empty_training_set(small_batch, tiny_cfg):
    with pytest.raises(EmptySet):
        fit(small_batch.subset(slice(0, 0)), init_params(tiny_cfg, 0), tiny_cfg)


@pytest.mark.parametrize("kw", [dict(lr=-1.0), dict(batch_size=0), dict(momentum=1.0), dict(epochs=-1)])
def test_train_config_rejects(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_predict_chunks_match_single_pass(small_batch, tiny_cfg):
    P = init_params(tiny_cfg, 0)
    parts = predict(small_batch, P, tiny_cfg, chunk=4)
    whole = forward(small_batch, P, tiny_cfg)
    assert len(parts) == 2
    assert np.allclose(np.concatenate([p.g_o for p in parts]), whole.g_o, atol=1e-12, rtol=0)
    loss, err = evaluate_batch(small_batch, P, tiny_cfg, chunk=6)
    assert loss == pytest.approx(loss_total(whole, small_batch, tiny_cfg), abs=1e-12)


def test_checkpoint_round_trip(tmp_path, short_run, small_batch, tiny_cfg):
    _, (P, _) = short_run
    stats = PixelStats(np.zeros((2, 64, 64)), np.ones((2, 64, 64)))
    save_checkpoint(tmp_path / "ck", P, tiny_cfg, seed=2, stats=stats)
    P2, cfg2, stats2, header = load_checkpoint(tmp_path / "ck")
    assert np.array_equal(P2.flat, P.flat) and cfg2 == tiny_cfg
    assert np.array_equal(stats2.std, stats.std)
    assert header["seed"] == 2 and header["preset"] == "tiny" and header["n_params"] == P.size
    assert header["layers"] == {"stream": 2, "fusion": 2, "positional": 2, "zone": 2}


def test_checkpoint_without_stats(tmp_path, tiny_cfg):
    save_checkpoint(tmp_path / "ck", init_params(tiny_cfg, 0), tiny_cfg, seed=0)
    assert load_checkpoint(tmp_path / "ck")[2] is None


def test_checkpoint_header_mismatch(tmp_path, tiny_cfg):
    save_checkpoint(tmp_path / "ck", init_params(tiny_cfg, 0), tiny_cfg, seed=0)
    header = json.loads((tmp_path / "ck.json").read_text())
    header["config"] = replace(tiny_cfg, d=16).to_dict()
    (tmp_path / "ck.json").write_text(json.dumps(header))
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "ck")
