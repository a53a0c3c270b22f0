import io

import numpy as np
import pytest

from telekf.dataio import (
    SyntheticSpec,
    apply_preset,
    default_layout,
    gen_synthetic,
    parse_kinematics,
    random_stable_arx,
    select_channels,
    write_kinematics,
)
from telekf.errors import (
    ContractViolationError,
    KinematicsFormatError,
    UnknownChannelNameError,
)

DT = 1.0 / 30.0


def test_layout_resource_sanity():
    layout = default_layout()
    assert layout.n_columns == 76
    assert len(set(layout.names)) == 76
    assert layout.block_indices("master").size == 38
    assert layout.block_indices("slave").size == 38
    assert layout.names[0] == "mtm_left_x"
    assert layout.names[38] == "psm_left_x"
    assert layout.names[-1] == "psm_right_grip"


def test_parse_two_zero_rows():
    row = " ".join(["0"] * 76)
    ts = parse_kinematics(f"{row}\n{row}\n".encode())
    assert ts.n_samples == 2
    assert ts.inputs.shape == (2, 38)
    assert ts.outputs.shape == (2, 38)
    assert not ts.inputs.any()
    assert ts.dt == pytest.approx(DT)


def test_parse_wrong_column_count_names_row():
    good = " ".join(["0"] * 76)
    bad = " ".join(["0"] * 75)
    with pytest.raises(KinematicsFormatError, match="row 2: expected 76 columns, got 75"):
        parse_kinematics(f"{good}\n{bad}\n".encode())


def test_parse_bad_token_names_row_and_column():
    tokens = ["0"] * 76
    tokens[4] = "abc"
    with pytest.raises(KinematicsFormatError, match="row 1, column 5"):
        parse_kinematics((" ".join(tokens) + "\n").encode())


def test_parse_nonfinite_rows_rejected_with_line_numbers():
    good = " ".join(["1.0"] * 76)
    tokens = ["1.0"] * 76
    tokens[10] = "nan"
    with pytest.raises(KinematicsFormatError, match=r"lines \[2\]"):
        parse_kinematics(f"{good}\n{' '.join(tokens)}\n{good}\n".encode())


def test_parse_empty_source():
    with pytest.raises(ContractViolationError, match="no data rows"):
        parse_kinematics(b"\n\n")


def test_parse_accepts_file_objects_and_skips_blank_lines():
    row = " ".join(str(v) for v in range(76))
    ts = parse_kinematics(io.BytesIO(f"\n{row}\n\n{row}\n".encode()))
    assert ts.n_samples == 2
    np.testing.assert_array_equal(ts.inputs[0], np.arange(38.0))


def test_select_identity_and_order_preserving():
    ts = _small_ts()
    same = select_channels(ts, ts.input_names, ts.output_names)
    np.testing.assert_array_equal(same.inputs, ts.inputs)
    flipped = select_channels(ts, list(ts.input_names[::-1]), ts.output_names)
    np.testing.assert_array_equal(flipped.inputs, ts.inputs[:, ::-1])
    assert flipped.input_names == ts.input_names[::-1]


def test_select_duplicate_column_allowed():
    ts = _small_ts()
    doubled = select_channels(ts, [ts.input_names[0], ts.input_names[0]], ts.output_names)
    np.testing.assert_array_equal(doubled.inputs[:, 0], doubled.inputs[:, 1])


def test_select_unknown_name_lists_available():
    ts = _small_ts()
    with pytest.raises(UnknownChannelNameError, match="available:"):
        select_channels(ts, ["nope"], ts.output_names)


def test_select_can_cross_sides():
    ts = _small_ts()
    crossed = select_channels(ts, [ts.output_names[0]], [ts.output_names[0]])
    np.testing.assert_array_equal(crossed.inputs[:, 0], ts.outputs[:, 0])


def test_paper_preset_labels_and_shape():
    row = " ".join(str(v) for v in range(76))
    ts = parse_kinematics(f"{row}\n{row}\n".encode())
    sel = apply_preset(ts, "paper", arm="right")
    assert sel.output_names == ("psm_x", "psm_y", "psm_z")
    assert sel.input_names == ("mtm_x", "mtm_y", "mtm_z", "mtm_vx", "mtm_vy", "mtm_vz")
    assert sel.outputs.shape == (2, 3)
    # right psm x,y,z sit at columns 58-60 (1-based)
    np.testing.assert_array_equal(sel.outputs[0], [57.0, 58.0, 59.0])


def test_gen_synthetic_deterministic():
    gen = random_stable_arx(2, 2, 1, n_outputs=2, n_inputs=2, seed=33)
    spec = SyntheticSpec(
        generator=gen, n_samples=400, seed=7, excitation="sines",
        process_noise=0.01, measurement_noise=0.01,
    )
    a = gen_synthetic(spec)
    b = gen_synthetic(spec)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.outputs, b.outputs)
    assert a.trial_id == b.trial_id


def test_gen_synthetic_zero_excitation_zero_noise_is_silent():
    gen = random_stable_arx(1, 1, 1, n_outputs=1, n_inputs=1, seed=34)
    spec = SyntheticSpec(generator=gen, n_samples=50, seed=0, input_scale=0.0)
    ts = gen_synthetic(spec)
    assert not ts.outputs.any()


def test_gen_synthetic_rejects_unstable_generator():
    from telekf.sysid import ArxModel

    unstable = ArxModel(
        na=1, nb=1, nk=1, a_coeffs=[[1.05]], b_coeffs=[[[1.0]]],
        n_outputs=1, n_inputs=1, dt=DT,
    )
    with pytest.raises(ContractViolationError, match="unstable"):
        gen_synthetic(SyntheticSpec(generator=unstable, n_samples=100, seed=0))
    ts = gen_synthetic(
        SyntheticSpec(generator=unstable, n_samples=100, seed=0, allow_unstable=True)
    )
    assert np.isfinite(ts.outputs).all()


def test_write_then_parse_round_trip_exact(tmp_path):
    gen = random_stable_arx(2, 2, 1, n_outputs=3, n_inputs=2, seed=35)
    ts = gen_synthetic(
        SyntheticSpec(
            generator=gen, n_samples=64, seed=3,
            process_noise=0.01, measurement_noise=0.02,
        )
    )
    path = tmp_path / "synthetic.txt"
    write_kinematics(ts, path)
    parsed = parse_kinematics(path)
    layout = default_layout()
    names = np.asarray(layout.names)
    sel = select_channels(
        parsed,
        list(names[layout.block_indices("master")[:2]]),
        list(names[layout.block_indices("slave")[:3]]),
    )
    np.testing.assert_array_equal(sel.inputs, ts.inputs)
    np.testing.assert_array_equal(sel.outputs, ts.outputs)


def test_trajectory_validation():
    with pytest.raises(ContractViolationError, match="row-aligned"):
        _small_ts(n_in=3, n_out=2)
    with pytest.raises(ContractViolationError, match="finite"):
        from telekf.dataio import TrajectorySet

        TrajectorySet(
            dt=DT, inputs=[[np.inf]], outputs=[[0.0]],
            input_names=("u1",), output_names=("y1",),
        )


def _small_ts(n_in=4, n_out=4):
    from telekf.dataio import TrajectorySet

    rng = np.random.default_rng(40)
    return TrajectorySet(
        dt=DT,
        inputs=rng.standard_normal((n_in, 2)),
        outputs=rng.standard_normal((n_out, 3)),
        input_names=("in_a", "in_b"),
        output_names=("out_a", "out_b", "out_c"),
    )
