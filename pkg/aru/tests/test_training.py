import dataclasses
import logging
import math

import numpy as np
import pytest
import torch

from aru.adaptive import aru_init
from aru.data.data import Forecast, Head, Mode, ScalingMode, WindowBatch
from aru.model.checkpoint import load_checkpoint
from aru.model.config import FeatureSchema, ModelConfig
from aru.model.forecaster import ForecastModel, forward_batch
from aru.model.params import ModelParams, init_params, param_shapes
from aru.preprocessing.dataset import DataConfig, prepare_dataset
from aru.preprocessing.scaling import PreparedSeries
from aru.preprocessing.synthetic import DOW_COLUMNS, HOUR_COLUMNS
from aru.training.backward import backward, loss_and_gradients
from aru.training.gradcheck import grad_check
from aru.training.history import history_states, window_origins
from aru.training.loss import NonFiniteLossError, nll_gradients, nll_loss
from aru.training.optim import AdamState, adam_step, clip_by_global_norm
from aru.training.selection import (
    SELECTED_ARU,
    SELECTION_DIR,
    SELECTION_TABLE,
    Candidate,
    SelectionConfig,
    SelectionRow,
    candidates,
    select_aru,
    selected_aru,
)
from aru.training.train import (
    BEST_CHECKPOINT,
    EPOCH_LOG,
    LAST_CHECKPOINT,
    EpochLogLine,
    TrainConfig,
    Trainer,
    TrainingDivergedError,
)
from aru.training.windows import (
    iterate_batches,
    make_windows,
    replay_windows,
    training_windows,
    validation_windows,
    window_at,
)
from aru.utils.utils import file_sha256
from aru.tests.utils import (
    prepared_series,
    random_batch,
    random_windows,
    small_model_config,
    warm_states,
)


def _forecast(mu, sigma) -> Forecast:
    return Forecast(mu=np.asarray(mu, dtype=np.float64), sigma=np.asarray(sigma, dtype=np.float64))


def test_nll_at_the_mean():
    y = np.array([[0.5, -1.0, 2.0]])
    assert math.isclose(nll_loss(_forecast(y, np.ones_like(y)), y), 0.918939, abs_tol=1e-6)


@pytest.mark.parametrize("sigma", (0.5, 1.0, 3.0))
def test_nll_one_sigma_residual(sigma):
    mu = np.zeros((2, 4))
    expected = 0.5 * math.log(2.0 * math.pi * sigma**2) + 0.5
    loss = nll_loss(_forecast(mu, np.full_like(mu, sigma)), mu + sigma)
    assert math.isclose(loss, expected, rel_tol=1e-14)


def test_nll_matches_formula(rng):
    mu, y = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    sigma = rng.uniform(0.1, 3.0, size=(5, 7))
    expected = np.mean(0.5 * np.log(2.0 * np.pi * sigma**2) + (y - mu) ** 2 / (2.0 * sigma**2))
    assert math.isclose(nll_loss(_forecast(mu, sigma), y), expected, rel_tol=1e-12)


def test_nll_rejects_non_finite():
    with pytest.raises(NonFiniteLossError):
        nll_loss(_forecast([np.nan], [1.0]), np.array([0.0]))
    with pytest.raises(NonFiniteLossError):
        nll_loss(_forecast([0.0], [1.0]), np.array([np.inf]))
    with pytest.raises(ValueError):
        nll_loss(_forecast([0.0], [0.0]), np.array([0.0]))


def test_nll_gradients_at_the_mean():
    y = np.array([[1.0, 2.0]])
    d_mu, d_sigma = nll_gradients(_forecast(y, [[2.0, 2.0]]), y)
    assert np.array_equal(d_mu, np.zeros((1, 2)))
    assert np.allclose(d_sigma, 0.5 / 2.0)


def test_adam_first_step():
    params = ModelParams({"w": np.array([1.0, -2.0, 0.5])})
    grads = ModelParams({"w": np.ones(3)})
    new_params, adam = adam_step(params, grads, AdamState.zeros_like(params), lr=1e-4)
    assert np.allclose(new_params["w"] - params["w"], -1e-4, rtol=1e-7)
    assert adam.step == 1


def test_adam_zero_gradient_decays_moments():
    params = ModelParams({"w": np.array([1.0, 2.0])})
    adam = AdamState(
        first_moment=ModelParams({"w": np.array([0.0, 0.0])}),
        second_moment=ModelParams({"w": np.array([4.0, 1.0])}),
        step=5,
    )
    new_params, new_adam = adam_step(params, ModelParams({"w": np.zeros(2)}), adam, lr=0.1)
    assert np.array_equal(new_params["w"], params["w"])
    assert np.allclose(new_adam.second_moment["w"], [0.999 * 4.0, 0.999])
    assert new_adam.step == 6


def test_adam_with_zero_learning_rate_is_identity(rng):
    params = ModelParams({"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)})
    grads = ModelParams({"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)})
    new_params, _ = adam_step(params, grads, AdamState.zeros_like(params), lr=0.0)
    assert new_params.equals(params)


def test_adam_scalar_quadratic_trace():
    lr, beta1, beta2, eps = 0.1, 0.9, 0.999, 1e-8
    x, m, v = 0.0, 0.0, 0.0
    trace = []
    for t in range(1, 11):
        g = 2.0 * (x - 3.0)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        x -= lr * (m / (1.0 - beta1**t)) / (math.sqrt(v / (1.0 - beta2**t)) + eps)
        trace.append(x)

    params = ModelParams({"x": np.array([0.0])})
    adam = AdamState.zeros_like(params)
    for expected in trace:
        grads = ModelParams({"x": 2.0 * (params["x"] - 3.0)})
        params, adam = adam_step(params, grads, adam, lr)
        assert math.isclose(float(params["x"][0]), expected, rel_tol=1e-14)
    assert adam.step == 10


def test_adam_rejects_mismatched_gradients():
    params = ModelParams({"w": np.zeros(2)})
    with pytest.raises(ValueError):
        adam_step(params, ModelParams({"w": np.zeros(3)}), AdamState.zeros_like(params), 0.1)


def test_clip_by_global_norm():
    grads = ModelParams({"a": np.array([3.0]), "b": np.array([4.0])})
    clipped, norm = clip_by_global_norm(grads, 10.0)
    assert norm == 5.0 and clipped is grads
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert np.allclose(clipped["a"], 0.6) and np.allclose(clipped["b"], 0.8)


def test_single_affine_gradient_is_closed_form():
    schema = FeatureSchema.build({}, ["x"])
    config = ModelConfig(
        rnn_units=1, hidden_sizes=(1, 1, 1), encoder_length=1, horizon=1, schema=schema
    )
    params = ModelParams({name: np.zeros(shape) for name, shape in param_shapes(config).items()})
    params["decoder.0.bias"] = np.array([1.0])
    params["decoder.1.weight"] = np.array([[1.0, 0.0]])
    params["decoder.2.weight"] = np.array([[1.0]])
    params["head.sigma.bias"] = np.array([0.0])
    batch = WindowBatch.from_windows(random_windows(config, 1))
    _, grads, _ = loss_and_gradients(config, params, batch)
    # h = 1, so the mean weight gradient is delta * h with delta = -(y - mu) / sigma^2
    sigma = math.log(2.0)
    delta = -batch.decoder_targets[0, 0] / sigma**2
    assert np.allclose(grads["head.mu.weight"], [[delta]], rtol=1e-12)
    assert np.allclose(grads["head.mu.bias"], [delta], rtol=1e-12)


@pytest.mark.timeout(120)
@pytest.mark.parametrize("head", list(Head))
def test_gradients_match_finite_differences(head):
    config = small_model_config(head)
    params = init_params(config, seed=12)
    batch = random_batch(config, 3, seed=12)
    states = warm_states(config, 3) if config.uses_aru else None
    report = grad_check(config, params, batch, states)
    assert report.passed, str(report)
    assert set(report.errors) == set(params.names())


@pytest.mark.slow
@pytest.mark.timeout(600)
def test_gradients_match_finite_differences_on_medium_aru():
    config = small_model_config(Head.ARU, preset="medium")
    params = init_params(config, seed=13)
    batch = random_batch(config, 4, seed=13)
    report = grad_check(config, params, batch, warm_states(config, 4))
    assert report.passed, str(report)


def test_grad_check_reports_a_corrupted_block():
    config = small_model_config(Head.ARU)
    params = init_params(config, seed=14)
    batch = random_batch(config, 2, seed=14)
    states = warm_states(config, 2)
    result = forward_batch(config, params, batch, states, Mode.TRAIN)
    gradients = backward(config, params, batch, result)
    gradients["decoder.1.weight"][0, 0] += 1e-2
    report = grad_check(config, params, batch, states, gradients=gradients)
    assert not report.passed
    assert report.failed_blocks == ["decoder.1.weight"]
    assert "FAIL" in str(report)


def test_grad_check_shrinks_the_step_at_a_relu_kink():
    config = small_model_config(Head.ARU)
    params = init_params(config, seed=12)
    batch = random_batch(config, 3, seed=12)
    states = warm_states(config, 3)
    pre = forward_batch(config, params, batch, states, Mode.TRAIN).cache.decoder.layers[2].pre
    # the first pre-activation of unit 0 now sits 2e-6 above zero
    params["decoder.2.bias"][0] -= pre[0, 0, 0] - 2e-6
    fixed_step = grad_check(config, params, batch, states, min_step=1e-5)
    assert fixed_step.skipped.get("decoder.2.bias", 0) >= 1
    assert "skipped" in str(fixed_step)
    report = grad_check(config, params, batch, states)
    assert report.passed, str(report)
    assert "decoder.2.bias" not in report.skipped
    with pytest.raises(ValueError):
        grad_check(config, params, batch, states, step=1e-6, min_step=1e-5)


def test_grad_check_needs_the_local_mean_gradient():
    config = small_model_config(Head.ARU)
    with pytest.raises(ValueError):
        grad_check(
            config,
            init_params(config, 0),
            random_batch(config, 1),
            differentiate_local_mean=False,
        )


def _torch_loss_and_gradients(config: ModelConfig, params: ModelParams, result, batch):
    """Reference loss and gradients from torch autograd with the local parameters
    taken from a recorded forward pass as constants."""
    t = {name: torch.tensor(value, requires_grad=True) for name, value in params.items()}

    def dense(name, x):
        return x @ t[f"{name}.weight"].T + t[f"{name}.bias"]

    parts = [
        t[f"embedding.{f.name}"][torch.as_tensor(batch.categorical[..., i])]
        for i, f in enumerate(config.schema.categorical)
    ]
    parts.append(torch.as_tensor(batch.continuous))
    v = torch.cat(parts, dim=-1)
    y = torch.as_tensor(batch.y)
    e = config.encoder_length
    g = torch.zeros(len(batch), config.rnn_units, dtype=torch.float64)
    previous = torch.zeros(len(batch), 1, dtype=torch.float64)
    for s in range(e):
        g = torch.tanh(dense("encoder", torch.cat([g, previous, v[:, s]], dim=-1)))
        previous = y[:, s : s + 1]
    v_dec = v[:, e:]
    g_dec = g[:, None, :].expand(-1, config.horizon, -1)
    z = torch.relu(dense("decoder.0", torch.cat([g_dec, v_dec], dim=-1)))
    z = torch.relu(dense("decoder.1", torch.cat([z, v_dec], dim=-1)))
    h = torch.relu(dense("decoder.2", z))
    if config.head is Head.BASELINE:
        mu_in, sigma_in = h, h
    else:
        theta_mu = torch.as_tensor(np.array(result.cache.theta_mu))
        a = torch.as_tensor(np.array(result.forecast.a))
        ones = torch.ones(h.shape[:-1] + (1,), dtype=torch.float64)
        m = torch.einsum("bkjd,bkd->bkj", theta_mu, torch.cat([h, ones], dim=-1))
        mu_in = torch.relu(dense("ff2.mu.1", torch.relu(dense("ff2.mu.0", torch.cat([h, m], -1)))))
        sigma_in = torch.relu(
            dense("ff2.sigma.1", torch.relu(dense("ff2.sigma.0", torch.cat([h, a], -1))))
        )
    mu = dense("head.mu", mu_in)[..., 0]
    zero = torch.zeros((), dtype=torch.float64)
    sigma = torch.logaddexp(dense("head.sigma", sigma_in)[..., 0], zero)
    z_score = (y[:, e:] - mu) / sigma
    loss = (0.5 * math.log(2.0 * math.pi) + torch.log(sigma) + 0.5 * z_score**2).mean()
    loss.backward()
    return float(loss), {name: tensor.grad.numpy() for name, tensor in t.items()}


@pytest.mark.parametrize("head", (Head.BASELINE, Head.ARU))
def test_gradients_match_autograd(head):
    config = small_model_config(head, preset="medium")
    params = init_params(config, seed=15)
    batch = random_batch(config, 5, seed=15)
    states = warm_states(config, 5) if config.uses_aru else None
    loss, grads, result = loss_and_gradients(config, params, batch, states)
    expected_loss, expected = _torch_loss_and_gradients(config, params, result, batch)
    assert math.isclose(loss, expected_loss, rel_tol=1e-12)
    for name in params.names():
        assert np.allclose(grads[name], expected[name], rtol=1e-9, atol=1e-12), name


def test_past_contributions_carry_no_gradient():
    schema = FeatureSchema.build({"step": 3}, [], embedding_dims={"step": 2})
    config = ModelConfig.from_preset(
        "small", 2, 2, schema, head=Head.ARU_DIRECT, aging_factors=(1.0,)
    )
    params = init_params(config, seed=16)
    # code 1 only feeds the first decoder step, code 2 only the second
    window = random_windows(config, 1, seed=16)[0]
    window.categorical[:, 0] = [0, 0, 1, 2]
    batch = WindowBatch.from_windows([window])
    _, grads, _ = loss_and_gradients(config, params, batch)
    assert np.all(grads["embedding.step"][1] == 0.0)
    assert np.any(grads["embedding.step"][2] != 0.0)


def test_make_windows_counts():
    assert len(make_windows(prepared_series(np.arange(10.0)), 3, 2, 1)) == 6
    assert len(make_windows(prepared_series(np.arange(5.0)), 3, 2, 1)) == 1
    series = prepared_series(np.arange(52.0))
    windows = make_windows(series, 8, 8, 4)
    assert [w.start for w in windows] == list(range(0, 37, 4))
    for w in windows:
        assert np.array_equal(w.y, series.y[w.start : w.start + 16])
        assert np.array_equal(w.decoder_targets, series.y[w.start + 8 : w.start + 16])


def test_make_windows_skips_short_series(caplog):
    with caplog.at_level(logging.WARNING):
        assert make_windows(prepared_series(np.arange(4.0), series_id="tiny"), 3, 2, 1) == []
    assert "tiny" in caplog.text


def test_make_windows_respects_end():
    windows = make_windows(prepared_series(np.arange(20.0)), 3, 2, 1, end=10)
    assert len(windows) == 6
    assert max(w.start for w in windows) + 5 == 10


def test_window_scaling_uses_the_encoder_span():
    y = np.array([1.0, -3.0, 2.0, 100.0, 200.0])
    series = prepared_series(y, scaling_mode=ScalingMode.WINDOW)
    w = window_at(series, 0, 3, 2)
    assert w.scale == 1.0 + 2.0
    assert np.allclose(w.y, y / 3.0)
    with pytest.raises(IndexError):
        window_at(series, 1, 3, 2)


def test_replay_windows_tile_the_history():
    series = prepared_series(np.arange(30.0))
    windows = replay_windows(series, 3, 2, until=20)
    starts = [w.start for w in windows]
    assert starts == sorted(starts)
    assert windows[-1].start + 5 == 20
    covered = np.concatenate([np.arange(w.start + 3, w.start + 5) for w in windows])
    assert np.array_equal(covered, np.arange(windows[0].start + 3, 20))


def test_iterate_batches():
    config = small_model_config(Head.BASELINE)
    windows = random_windows(config, 7)
    sizes = [len(b) for b in iterate_batches(windows, 3)]
    assert sizes == [3, 3, 1]
    shuffled = [b.series_ids for b in iterate_batches(windows, 7, np.random.default_rng(1))]
    assert sorted(shuffled[0]) == sorted(w.series_id for w in windows)


@pytest.fixture(scope="module")
def synthetic_data(small_synthetic):
    config = DataConfig(
        time_features=False,
        continuous_columns=list(HOUR_COLUMNS + DOW_COLUMNS),
        encoder_length=8,
        horizon=8,
    )
    return prepare_dataset(small_synthetic.dataset, config)


def test_training_and_validation_windows(synthetic_data):
    train = training_windows(synthetic_data, stride=4)
    # 240 steps, validation from 224
    assert len(train) == 3 * ((224 - 16) // 4 + 1)
    assert all(w.start + 16 <= 224 for w in train)
    validation = validation_windows(synthetic_data)
    assert [w.start + 8 for w in validation] == [224, 224, 224]


def _train_config(**kwargs) -> TrainConfig:
    return TrainConfig(
        **{"batch_size": 4, "learning_rate": 1e-3, "epochs": 2, "progress_bar": False, **kwargs}
    )


def test_trainer_writes_log_and_checkpoints(tmp_path):
    config = small_model_config(Head.ARU)
    windows = random_windows(config, 10, seed=17)
    trainer = Trainer(ForecastModel(config, seed=17), _train_config(), output_dir=tmp_path)
    lines = trainer.fit(windows[:8], windows[8:])
    assert [line.epoch for line in lines] == [1, 2]
    log = (tmp_path / EPOCH_LOG).read_text(encoding="utf-8").splitlines()
    assert log[0] == EpochLogLine.HEADER
    assert len(log) == 3 and log[1].startswith("1\t")
    assert (tmp_path / LAST_CHECKPOINT).exists() and (tmp_path / BEST_CHECKPOINT).exists()
    assert trainer.best_validation_nll == min(line.validation_nll for line in lines)


def test_resume_continues_the_step_counter(tmp_path):
    config = small_model_config(Head.BASELINE)
    windows = random_windows(config, 8, seed=18)
    Trainer(ForecastModel(config, seed=18), _train_config(), output_dir=tmp_path).fit(windows)
    resumed = Trainer.resume(_train_config(epochs=3), tmp_path, metadata={"protocol": "fixed"})
    assert resumed.epoch == 2 and resumed.adam.step == 4
    lines = resumed.fit(windows)
    assert [line.epoch for line in lines] == [3]
    assert resumed.adam.step == 6
    assert resumed.metadata == {"protocol": "fixed"}
    assert len((tmp_path / EPOCH_LOG).read_text(encoding="utf-8").splitlines()) == 4


def test_training_is_reproducible():
    config = small_model_config(Head.ARU)
    windows = random_windows(config, 9, seed=19)
    models = []
    for _ in range(2):
        trainer = Trainer(ForecastModel(config, seed=19), _train_config(seed=5))
        trainer.fit(windows)
        models.append(trainer.model)
    assert models[0].params.equals(models[1].params)


def test_divergence_is_reported(mocker):
    config = small_model_config(Head.BASELINE)
    mocker.patch(
        "aru.training.train.loss_and_gradients",
        side_effect=NonFiniteLossError("loss evaluated to nan"),
    )
    trainer = Trainer(ForecastModel(config, seed=0), _train_config())
    with pytest.raises(TrainingDivergedError) as excinfo:
        trainer.fit(random_windows(config, 4))
    assert excinfo.value.epoch == 1


def test_fit_needs_windows():
    config = small_model_config(Head.BASELINE)
    with pytest.raises(ValueError):
        Trainer(ForecastModel(config), _train_config()).fit([])


@pytest.mark.slow
@pytest.mark.timeout(600)
@pytest.mark.parametrize("head", list(Head))
def test_loss_decreases_on_synthetic_data(synthetic_data, head):
    config = ModelConfig.from_preset("small", 8, 8, synthetic_data.schema, head=head)
    trainer = Trainer(
        ForecastModel(config, seed=20), _train_config(epochs=5, batch_size=16, learning_rate=5e-3)
    )
    lines = trainer.fit(training_windows(synthetic_data, stride=4))
    assert lines[-1].train_nll < lines[0].train_nll


def _history_series(n: int = 2, length: int = 40) -> list[PreparedSeries]:
    rng = np.random.default_rng(23)
    return [
        prepared_series(rng.normal(size=length), f"s{i}", n_categorical=2, n_continuous=2)
        for i in range(n)
    ]


def test_history_state_at_the_first_origin_is_empty():
    config = small_model_config(Head.ARU)
    model = ForecastModel(config, seed=21)
    history = history_states(model, _history_series(), {"s0": {6}, "s1": {6}})
    assert len(history) == 2
    for sid in ("s0", "s1"):
        assert history.states[(sid, 6)].equals(aru_init(config.aru))


def test_history_states_match_a_sequential_replay():
    config = small_model_config(Head.ARU)
    model = ForecastModel(config, seed=22)
    series = _history_series()
    e, k = config.encoder_length, config.horizon
    history = history_states(model, series, {"s0": {14, 17, 26}, "s1": {22}})
    assert len(history) == 4
    for s in series:
        for origin in (14, 22, 26):
            if (s.series_id, origin) not in history.states:
                continue
            expected = model.build_state(replay_windows(s, e, k, until=origin))
            got = history.states[(s.series_id, origin)]
            for name in ("sxx", "sxy", "sn", "ss"):
                assert np.allclose(getattr(got, name), getattr(expected, name), rtol=1e-10)
    # step 17 sits inside the tile starting at 8, after its first three steps
    tile = window_at(series[0], 8, e, k)
    batch = WindowBatch.from_windows([tile])
    h = model.decode(model.encode(batch), batch.categorical[:, e:], batch.continuous[:, e:])
    expected = model.adapt(
        model.build_state(replay_windows(series[0], e, k, until=14)),
        h[0, :3],
        batch.decoder_targets[0, :3],
    )
    assert np.allclose(history.states[("s0", 17)].sxx, expected.sxx, rtol=1e-10)


def test_history_states_for_a_batch():
    config = small_model_config(Head.ARU)
    model = ForecastModel(config, seed=24)
    series = _history_series()
    windows = [window_at(series[1], 4, 6, 4), window_at(series[0], 8, 6, 4)]
    assert window_origins(windows) == {"s1": {10}, "s0": {14}}
    history = history_states(model, series, window_origins(windows))
    stacked = history.for_batch(WindowBatch.from_windows(windows))
    assert stacked.batch_shape == (2,)
    assert np.array_equal(stacked.sxx[1], history.states[("s0", 14)].sxx)
    with pytest.raises(KeyError):
        history.for_batch(WindowBatch.from_windows([window_at(series[0], 12, 6, 4)]))
    with pytest.raises(ValueError):
        history_states(ForecastModel(small_model_config(Head.BASELINE)), series, {"s0": {10}})


def test_fit_starts_windows_from_their_history():
    config = small_model_config(Head.ARU)
    series = _history_series()
    train = [w for s in series for w in make_windows(s, 6, 4, 2, end=32)]
    validation = [window_at(s, 26, 6, 4) for s in series]
    runs = {}
    for name, replay, given in (
        ("warm", True, series),
        ("cold", False, series),
        ("none", True, None),
    ):
        trainer = Trainer(ForecastModel(config, seed=25), _train_config(replay_history=replay))
        runs[name] = trainer.fit(train, validation, given)
    assert runs["cold"][0].train_nll == runs["none"][0].train_nll
    assert runs["cold"][0].validation_nll == runs["none"][0].validation_nll
    assert runs["warm"][0].train_nll != runs["cold"][0].train_nll
    assert all(math.isfinite(line.validation_nll) for line in runs["warm"])


def test_selection_candidates():
    grid = SelectionConfig(aging_factor_sets=[[1.0], [1.0, 0.9]], ridges=[0.1, 1])
    found = candidates(grid)
    assert [c.name for c in found] == [
        "alpha1_ridge0.1",
        "alpha1_ridge1",
        "alpha1-0.9_ridge0.1",
        "alpha1-0.9_ridge1",
    ]
    assert found[3].aging_factors == (1.0, 0.9) and found[3].ridge == 1.0
    with pytest.raises(ValueError):
        candidates(SelectionConfig(aging_factor_sets=[], ridges=[1.0]))


def test_candidate_replaces_only_the_aru_settings():
    config = small_model_config(Head.ARU_DIRECT, aging_factors=(1.0,), ridge=1.0)
    applied = Candidate(aging_factors=(0.99, 0.9), ridge=10.0).apply(config)
    assert applied.aru.aging_factors == (0.99, 0.9) and applied.aru.ridge == 10.0
    assert applied.aru.feature_dim == config.aru.feature_dim
    assert applied.head is config.head and applied.schema == config.schema
    with pytest.raises(ValueError):
        Candidate(aging_factors=(1.0,), ridge=1.0).apply(small_model_config(Head.BASELINE))


def test_selected_aru_from_metadata():
    config = small_model_config(Head.ARU, aging_factors=(0.95,), ridge=0.1)
    assert selected_aru({"protocol": "fixed"}) is None
    assert selected_aru({SELECTED_ARU: config.aru.to_dict()}) == config.aru


def test_select_aru_keeps_the_lowest_validation_nll(tmp_path, synthetic_data):
    config = ModelConfig.from_preset("small", 8, 8, synthetic_data.schema, head=Head.ARU)
    grid = SelectionConfig(aging_factor_sets=[[1.0], [0.9]], ridges=[1.0])
    train_config = _train_config(epochs=1, batch_size=32)
    result = select_aru(config, train_config, synthetic_data, grid, tmp_path)
    assert len(result.rows) == 2
    assert result.best.validation_nll == min(row.validation_nll for row in result.rows)
    assert result.config == result.best.candidate.apply(config)
    lines = (tmp_path / SELECTION_TABLE).read_text(encoding="utf-8").splitlines()
    assert lines[0] == SelectionRow.HEADER and len(lines) == 3
    winner = tmp_path / SELECTION_DIR / result.best.candidate.name
    assert file_sha256(tmp_path / BEST_CHECKPOINT) == file_sha256(winner / BEST_CHECKPOINT)
    checkpoint = load_checkpoint(tmp_path / BEST_CHECKPOINT)
    assert selected_aru(checkpoint.metadata) == result.config.aru
    with pytest.raises(ValueError):
        select_aru(
            dataclasses.replace(config, head=Head.BASELINE, aru=None),
            _train_config(),
            synthetic_data,
            grid,
            tmp_path,
        )
