import json

import numpy as np
import pytest

from conftest import reference_dataset
from telekf.dataio import SyntheticSpec, TrajectorySet, gen_synthetic, random_stable_arx
from telekf.errors import (
    ContractViolationError,
    IllConditionedDataError,
    UnsupportedStructureError,
)
from telekf.sysid import (
    ArxModel,
    arx_fit,
    arx_to_ss,
    cross_validate,
    load_model,
    order_sweep,
    predict_one_step,
    residual_covariances,
    save_model,
    simulate_arx,
)

DT = 1.0 / 30.0


def known_111():
    return ArxModel(
        na=1, nb=1, nk=1, a_coeffs=[[0.5]], b_coeffs=[[[1.0]]],
        n_outputs=1, n_inputs=1, dt=DT,
    )


def known_221():
    # poles at 0.6 and 0.3: y[t] = 0.9 y[t-1] - 0.18 y[t-2] + 1.2 u[t-1] + 0.4 u[t-2]
    return ArxModel(
        na=2, nb=2, nk=1, a_coeffs=[[0.9, -0.18]], b_coeffs=[[[1.2, 0.4]]],
        n_outputs=1, n_inputs=1, dt=DT,
    )


def synth(model, n, seed, meas_noise=0.0):
    return gen_synthetic(
        SyntheticSpec(
            generator=model, n_samples=n, seed=seed,
            excitation="white", measurement_noise=meas_noise,
        )
    )


# ---------------------------------------------------------------------------
# arx_fit


def test_fit_recovers_known_first_order_exactly():
    data = synth(known_111(), 500, seed=4)
    fit = arx_fit(data, (1, 1, 1))
    np.testing.assert_allclose(fit.a_coeffs, [[0.5]], atol=1e-6)
    np.testing.assert_allclose(fit.b_coeffs, [[[1.0]]], atol=1e-6)


def test_fit_recovers_known_second_order_exactly():
    truth = known_221()
    data = synth(truth, 800, seed=5)
    fit = arx_fit(data, (2, 2, 1))
    np.testing.assert_allclose(fit.a_coeffs, truth.a_coeffs, atol=1e-6)
    np.testing.assert_allclose(fit.b_coeffs, truth.b_coeffs, atol=1e-6)


def test_fit_zero_output_gives_zero_coefficients():
    rng = np.random.default_rng(6)
    data = TrajectorySet(
        dt=DT,
        inputs=rng.standard_normal((300, 1)),
        outputs=np.zeros((300, 1)),
        input_names=("u1",),
        output_names=("y1",),
    )
    fit = arx_fit(data, (2, 2, 1))
    np.testing.assert_array_equal(fit.a_coeffs, np.zeros((1, 2)))
    np.testing.assert_array_equal(fit.b_coeffs, np.zeros((1, 1, 2)))


def test_fit_with_noise_stays_close():
    truth = known_111()
    close = 0
    for seed in range(5):
        data = synth(truth, 5000, seed=seed, meas_noise=0.01)
        fit = arx_fit(data, (1, 1, 1))
        if (
            abs(fit.a_coeffs[0, 0] - 0.5) < 0.01
            and abs(fit.b_coeffs[0, 0, 0] - 1.0) < 0.01
        ):
            close += 1
    assert close >= 4


def test_fit_rejects_short_data():
    data = synth(known_111(), 500, seed=7)
    short = TrajectorySet(
        dt=DT, inputs=data.inputs[:13], outputs=data.outputs[:13],
        input_names=data.input_names, output_names=data.output_names,
    )
    with pytest.raises(ContractViolationError, match="samples"):
        arx_fit(short, (1, 1, 1))


def test_fit_rank_deficient_noisy_data_raises_with_condition():
    rng = np.random.default_rng(8)
    n = 400
    data = TrajectorySet(
        dt=DT,
        inputs=np.ones((n, 1)),  # constant input: collinear lag columns
        outputs=rng.standard_normal((n, 1)),
        input_names=("u1",),
        output_names=("y1",),
    )
    with pytest.raises(IllConditionedDataError) as info:
        arx_fit(data, (1, 2, 1))
    assert info.value.condition > 1e6


def test_fit_local_optimality_of_coefficients():
    truth = known_221()
    data = synth(truth, 600, seed=9, meas_noise=0.05)
    fit = arx_fit(data, (2, 2, 1))
    _, base_pred = predict_one_step(fit, data)
    t0 = max(fit.na, fit.nb + fit.nk - 1)
    target = data.outputs[t0:]
    base_sse = float(np.sum((target - base_pred) ** 2))
    for idx in range(2):
        for delta in (-1e-3, 1e-3):
            a_mod = fit.a_coeffs.copy()
            a_mod[0, idx] += delta
            bumped = ArxModel(
                na=2, nb=2, nk=1, a_coeffs=a_mod, b_coeffs=fit.b_coeffs,
                n_outputs=1, n_inputs=1, dt=DT,
            )
            _, pred = predict_one_step(bumped, data)
            assert np.sum((target - pred) ** 2) >= base_sse - 1e-12


# ---------------------------------------------------------------------------
# simulate_arx


def test_simulate_pure_delay():
    model = ArxModel(
        na=1, nb=1, nk=1, a_coeffs=[[0.0]], b_coeffs=[[[1.0]]],
        n_outputs=1, n_inputs=1, dt=DT,
    )
    u = np.arange(1.0, 7.0).reshape(-1, 1)
    y = simulate_arx(model, u)
    np.testing.assert_array_equal(y.ravel(), [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])


def test_simulate_ar_decay_with_zero_input_gain():
    model = ArxModel(
        na=1, nb=1, nk=1, a_coeffs=[[0.5]], b_coeffs=[[[0.0]]],
        n_outputs=1, n_inputs=1, dt=DT,
    )
    y = simulate_arx(model, np.ones((5, 1)), y_init=[[8.0]])
    np.testing.assert_allclose(y.ravel(), [4.0, 2.0, 1.0, 0.5, 0.25])


def test_simulate_matches_one_step_predictor_when_na_zero():
    model = ArxModel(
        na=0, nb=2, nk=1, a_coeffs=np.zeros((1, 0)), b_coeffs=[[[0.7, -0.2]]],
        n_outputs=1, n_inputs=1, dt=DT,
    )
    rng = np.random.default_rng(10)
    u = rng.standard_normal((50, 1))
    y = simulate_arx(model, u)
    data = TrajectorySet(
        dt=DT, inputs=u, outputs=y, input_names=("u1",), output_names=("y1",)
    )
    t0, preds = predict_one_step(model, data)
    np.testing.assert_allclose(y[t0:], preds, atol=1e-12)


def test_simulate_requires_enough_history():
    with pytest.raises(ContractViolationError, match="y_init"):
        simulate_arx(known_221(), np.ones((5, 1)), y_init=np.ones((1, 1)))


# ---------------------------------------------------------------------------
# arx_to_ss


def test_realization_first_order_canonical_matrices():
    sm = arx_to_ss(known_111())
    np.testing.assert_array_equal(sm.a, [[0.5]])
    np.testing.assert_array_equal(sm.b, [[1.0]])
    np.testing.assert_array_equal(sm.h, [[1.0]])


def test_realization_impulse_response_matches_difference_equation():
    model = known_111()
    sm = arx_to_ss(model)
    u = np.zeros((50, 1))
    u[0] = 1.0
    y_arx = simulate_arx(model, u)
    x = np.zeros(sm.n_states)
    y_ss = np.empty((50, 1))
    for t in range(50):
        y_ss[t] = sm.h @ x
        x = sm.a @ x + sm.b @ u[t]
    np.testing.assert_allclose(y_ss, y_arx, atol=1e-12)
    # geometric decay 1, 0.5, 0.25 ... starting one sample after the impulse
    np.testing.assert_allclose(y_arx[1:6, 0], [1.0, 0.5, 0.25, 0.125, 0.0625], atol=1e-12)


def test_realization_rejects_static_and_feedthrough_structures():
    static = ArxModel(
        na=0, nb=1, nk=1, a_coeffs=np.zeros((1, 0)), b_coeffs=[[[1.0]]],
        n_outputs=1, n_inputs=1, dt=DT,
    )
    with pytest.raises(UnsupportedStructureError, match="na=0"):
        arx_to_ss(static)
    feedthrough = ArxModel(
        na=1, nb=1, nk=0, a_coeffs=[[0.5]], b_coeffs=[[[1.0]]],
        n_outputs=1, n_inputs=1, dt=DT,
    )
    with pytest.raises(UnsupportedStructureError, match="nk=0"):
        arx_to_ss(feedthrough)


def test_realization_equivalence_on_random_stable_models():
    rng = np.random.default_rng(11)
    for i in range(30):
        na = int(rng.integers(1, 4))
        nb = int(rng.integers(1, 4))
        nk = int(rng.integers(1, 3))
        p = int(rng.integers(1, 3))
        m = int(rng.integers(1, 3))
        model = random_stable_arx(na, nb, nk, n_outputs=p, n_inputs=m, seed=1000 + i)
        u = rng.standard_normal((200, m))
        y_arx = simulate_arx(model, u)
        sm = arx_to_ss(model)
        x = np.zeros(sm.n_states)
        y_ss = np.empty((200, p))
        for t in range(200):
            y_ss[t] = sm.h @ x
            x = sm.a @ x + sm.b @ u[t]
        assert np.abs(y_ss - y_arx).max() < 1e-10


def test_realization_block_dimensions_and_noise_shapes():
    model = random_stable_arx(2, 2, 1, n_outputs=3, n_inputs=2, seed=12)
    sm = arx_to_ss(model, q=0.5, r=np.array([1.0, 2.0, 3.0]))
    assert sm.n_states == 6
    assert sm.h.shape == (3, 6)
    np.testing.assert_array_equal(sm.q, 0.5 * np.eye(6))
    np.testing.assert_array_equal(sm.r, np.diag([1.0, 2.0, 3.0]))


def test_stability_flag():
    assert known_221().stable
    unstable = ArxModel(
        na=1, nb=1, nk=1, a_coeffs=[[1.1]], b_coeffs=[[[1.0]]],
        n_outputs=1, n_inputs=1, dt=DT,
    )
    assert not unstable.stable


# ---------------------------------------------------------------------------
# cross-validation and order sweep


def test_cross_validate_self_consistency_on_clean_data():
    truth = known_221()
    data = synth(truth, 1000, seed=13)
    fit = arx_fit(data, (2, 2, 1))
    with pytest.warns(UserWarning):
        report = cross_validate(fit, data)
    assert report.fit_percent[0] >= 99.99


def test_cross_validate_constant_channel_reports_nan_sentinel():
    model = random_stable_arx(1, 1, 1, n_outputs=2, n_inputs=1, seed=14)
    rng = np.random.default_rng(15)
    holdout = TrajectorySet(
        dt=DT,
        inputs=rng.standard_normal((200, 1)),
        outputs=np.column_stack([rng.standard_normal(200), np.full(200, 2.5)]),
        input_names=("u1",),
        output_names=("y1", "y2"),
    )
    report = cross_validate(model, holdout)
    assert np.isnan(report.fit_percent[1])
    assert np.isfinite(report.fit_percent[0])


def test_cross_validate_channel_mismatch():
    model = known_111()
    data = synth(random_stable_arx(1, 1, 1, n_outputs=2, n_inputs=1, seed=16), 300, seed=17)
    with pytest.raises(ContractViolationError, match="outputs"):
        cross_validate(model, data)


def test_cross_validate_warns_on_same_trial():
    truth = known_111()
    data = synth(truth, 400, seed=18)
    fit = arx_fit(data, (1, 1, 1))
    with pytest.warns(UserWarning, match="matches the training trial"):
        cross_validate(fit, data)


def test_order_sweep_prefers_true_orders():
    truth = known_221()
    train = synth(truth, 1200, seed=19, meas_noise=0.01)
    holdout = synth(truth, 1200, seed=20, meas_noise=0.01)
    records = order_sweep(
        train, holdout, na_values=(1, 2), nb_values=(1, 2), nk_values=(1,)
    )
    best = records[0]
    assert best["orders"] == (2, 2, 1)
    assert best["report"].aggregate >= 95.0
    low = next(r for r in records if r["orders"] == (1, 1, 1))
    assert best["report"].aggregate > low["report"].aggregate


# ---------------------------------------------------------------------------
# residual noise and serialization


def test_residual_covariances_match_injected_noise():
    truth = known_111()
    data = synth(truth, 20000, seed=21, meas_noise=0.05)
    fit = arx_fit(data, (1, 1, 1))
    q_mat, r_mat = residual_covariances(fit, data)
    # one-step residual variance of an output-noise ARX: roughly (1 + a^2) sigma^2
    expected = (1 + 0.25) * 0.05**2
    assert q_mat[0, 0] == pytest.approx(expected, rel=0.15)
    assert r_mat[0, 0] == pytest.approx(expected, rel=0.15)


def test_model_file_round_trip_is_lossless(tmp_path):
    data = reference_dataset(n_samples=800, seed=22)
    model = arx_fit(data, (2, 2, 1))
    q_mat, r_mat = residual_covariances(model, data)
    with pytest.warns(UserWarning):
        report = cross_validate(model, data)
    path = tmp_path / "model.json"
    save_model(
        model,
        path,
        input_names=data.input_names,
        output_names=data.output_names,
        fit=report,
        noise=(float(q_mat[0, 0]), np.diag(r_mat)),
    )
    loaded, meta = load_model(path)
    np.testing.assert_array_equal(loaded.a_coeffs, model.a_coeffs)
    np.testing.assert_array_equal(loaded.b_coeffs, model.b_coeffs)
    assert loaded.dt == model.dt
    assert (loaded.na, loaded.nb, loaded.nk) == (2, 2, 1)
    assert meta["input_names"] == list(data.input_names)
    assert meta["noise"]["q"] == float(q_mat[0, 0])
    np.testing.assert_array_equal(meta["noise"]["r_diag"], np.diag(r_mat))


def test_load_model_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.json"
    path.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(ContractViolationError, match="format"):
        load_model(path)
