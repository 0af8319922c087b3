import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tensorchart.channel import SystemConfig, generate_dataset
from tensorchart.features import DIRECT, GEODESIC, DissimilarityMatrix
from tensorchart.io import (
    CorruptArtifactError,
    FeatureSet,
    model_to_bytes,
    read_dataset,
    read_dataset_header,
    read_dissimilarity,
    read_features,
    read_model,
    read_positions,
    tensor_from_bytes,
    tensor_to_bytes,
    write_dataset,
    write_dissimilarity,
    write_features,
    write_model,
)
from tensorchart.network import Architecture, init_params, parameter_count

SMALL = SystemConfig(n_rx=32, n_pol=2, n_tx=2, n_sub=408)


@settings(max_examples=40, deadline=None)
@given(
    x=hnp.arrays(
        st.sampled_from([np.float64, np.complex128]),
        hnp.array_shapes(min_dims=0, max_dims=4, max_side=4),
        elements=st.floats(-1e6, 1e6, allow_nan=False),
    )
)
def test_tensor_round_trip(x):
    y = tensor_from_bytes(tensor_to_bytes(x))
    assert y.shape == x.shape and y.dtype == x.dtype
    assert np.array_equal(y, x)


def test_tensor_layout_is_first_mode_fastest():
    x = np.arange(6.0).reshape(2, 3)
    raw = tensor_to_bytes(x)
    payload = np.frombuffer(raw[-48:], dtype="<f8")
    assert list(payload) == [0, 3, 1, 4, 2, 5]


def test_tensor_bad_magic_and_truncation():
    raw = tensor_to_bytes(np.ones((2, 2)))
    with pytest.raises(CorruptArtifactError) as info:
        tensor_from_bytes(b"XXXX" + raw[4:])
    assert info.value.offset == 0
    with pytest.raises(CorruptArtifactError):
        tensor_from_bytes(raw[:-3])
    bad_version = raw[:4] + struct.pack("<H", 99) + raw[6:]
    with pytest.raises(CorruptArtifactError, match="version"):
        tensor_from_bytes(bad_version)


@pytest.fixture(scope="module")
def hopped():
    return generate_dataset(0, 4, snr_db=10.0, h_p=17)


def test_dataset_round_trip(tmp_path, hopped):
    path = tmp_path / "d.ccds"
    assert write_dataset(path, iter(hopped), SMALL, 4, 17, 10.0, 0) == 4
    head, samples = read_dataset(path)
    assert head.n_samples == 4 and head.hopping == 17 and head.snr_db == 10.0 and head.config == SMALL
    for a, b in zip(hopped, samples):
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.mask, b.mask)
        assert a.hopping_offset == b.hopping_offset
        assert np.array_equal(a.channel, b.channel, equal_nan=True)
    assert np.array_equal(read_positions(path), np.array([s.position for s in hopped]))


def test_dataset_header_without_noise(tmp_path):
    path = tmp_path / "d.ccds"
    write_dataset(path, generate_dataset(1, 1), SMALL, 1, seed=1)
    head = read_dataset_header(path)
    assert head.snr_db is None and head.seed == 1 and head.hopping == 1


def test_dataset_count_mismatch(tmp_path, hopped):
    with pytest.raises(ValueError):
        write_dataset(tmp_path / "d.ccds", iter(hopped), SMALL, 5, 17)


def test_dataset_corruption_reports_offset(tmp_path, hopped):
    path = tmp_path / "d.ccds"
    write_dataset(path, iter(hopped), SMALL, 4, 17)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptArtifactError) as info:
        read_dataset(path)
    assert info.value.offset is not None and info.value.offset > 0
    path.write_bytes(raw + b"\0")
    with pytest.raises(CorruptArtifactError, match="trailing"):
        read_dataset(path)


def test_features_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    fs = FeatureSet(rng.standard_normal((3, 4, 4, 2)), rng.standard_normal((3, 4, 4, 2)), rng.standard_normal((3, 4, 4)) + 0j, 17, (4, 4, 2))
    path = tmp_path / "f.ccft"
    write_features(path, fs)
    back = read_features(path)
    assert np.array_equal(back.re, fs.re) and np.array_equal(back.im, fs.im) and np.array_equal(back.scm, fs.scm)
    assert back.h_p == 17 and back.ranks == (4, 4, 2)


@pytest.mark.parametrize("kind", [DIRECT, GEODESIC])
def test_dissimilarity_round_trip(tmp_path, kind):
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 1, (6, 6))
    a = a + a.T
    np.fill_diagonal(a, 0)
    path = tmp_path / "g.ccdm"
    write_dissimilarity(path, DissimilarityMatrix(a, kind))
    back = read_dissimilarity(path)
    assert back.kind == kind and np.array_equal(back.values, a)


def test_dissimilarity_wrong_magic(tmp_path):
    path = tmp_path / "g.ccdm"
    path.write_bytes(b"CCFT" + b"\0" * 20)
    with pytest.raises(CorruptArtifactError, match="magic"):
        read_dissimilarity(path)


def test_model_round_trip(tmp_path):
    p = init_params(Architecture(), 3)
    path = tmp_path / "m.ccnn"
    write_model(path, p)
    back = read_model(path)
    assert back.architecture == p.architecture
    assert np.array_equal(back.flat(), p.flat())


def test_parameter_count_matches_payload():
    p = init_params(Architecture(), 0)
    raw = model_to_bytes(p)
    count_at = raw.index(struct.pack("<Q", parameter_count(p)))
    assert len(raw) - count_at - 8 == 8 * parameter_count(p)


def test_model_payload_mismatch(tmp_path):
    raw = bytearray(model_to_bytes(init_params(Architecture(), 0)))
    path = tmp_path / "m.ccnn"
    path.write_bytes(bytes(raw[:-8]))
    with pytest.raises(CorruptArtifactError):
        read_model(path)
    # point the first TCL stage at a different input shape
    raw[7:11] = struct.pack("<I", 31)
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptArtifactError, match="parameters"):
        read_model(path)
