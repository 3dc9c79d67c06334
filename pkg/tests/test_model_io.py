import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tvnmf.model_io import (
    FormatError,
    load_model,
    load_ubm,
    matrix_from_bytes,
    matrix_to_bytes,
    read_matrix,
    save_model,
    save_ubm,
    write_ascii,
    write_matrix,
)
from tvnmf.tvm import CovarianceBlocks, TotalVariabilityModel


def test_one_by_one_layout(tmp_path):
    path = tmp_path / "m.mat"
    write_matrix(path, np.array([[0.5]]))
    data = path.read_bytes()
    assert len(data) == 20
    assert data == b"MAT1" + b"\x01\x00\x00\x00" * 2 + struct.pack("<d", 0.5)


def test_row_major(tmp_path):
    M = np.arange(6.0).reshape(2, 3)
    data = matrix_to_bytes(M)
    assert struct.unpack("<4sII", data[:12]) == (b"MAT1", 2, 3)
    assert struct.unpack("<6d", data[12:]) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


def test_round_trip_full_size_dictionary(tmp_path, rng):
    M = rng.normal(size=(129, 60)) * 10.0 ** rng.integers(-300, 300, size=(129, 60))
    write_matrix(tmp_path / "w.mat", M)
    back = read_matrix(tmp_path / "w.mat")
    assert back.tobytes() == M.tobytes()


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=12),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_round_trip_bit_exact(M):
    back = matrix_from_bytes(matrix_to_bytes(M))
    assert back.shape == M.shape
    assert back.tobytes() == M.tobytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "x.mat"
    path.write_bytes(b"MATX" + struct.pack("<II", 1, 1) + struct.pack("<d", 1.0))
    with pytest.raises(FormatError, match="bad magic"):
        read_matrix(path)


def test_truncated(tmp_path):
    path = tmp_path / "t.mat"
    path.write_bytes(matrix_to_bytes(np.ones((3, 3)))[:-4])
    with pytest.raises(FormatError, match="truncated"):
        read_matrix(path)
    path.write_bytes(b"MAT")
    with pytest.raises(FormatError, match="truncated"):
        read_matrix(path)


def test_non_finite_rejected(tmp_path):
    path = tmp_path / "n.mat"
    path.write_bytes(b"MAT1" + struct.pack("<II", 1, 1) + struct.pack("<d", float("nan")))
    with pytest.raises(FormatError, match="non-finite"):
        read_matrix(path)
    with pytest.raises(ValueError, match="non-finite"):
        write_matrix(path, np.array([[np.inf]]))


def test_dimension_overflow_header(tmp_path):
    path = tmp_path / "big.mat"
    path.write_bytes(b"MAT1" + struct.pack("<II", 2**32 - 1, 2**32 - 1))
    with pytest.raises(FormatError, match="truncated"):
        read_matrix(path)


def test_ascii_export(tmp_path):
    F = np.array([[1.0, 2.0, 3.0], [-0.5, 0.25, 7.0]])
    write_ascii(tmp_path / "f.txt", F)
    lines = (tmp_path / "f.txt").read_text().splitlines()
    assert len(lines) == 3
    np.testing.assert_array_equal(np.array([l.split() for l in lines], float), F.T)


# -- bundles ---------------------------------------------------------------

@pytest.fixture
def model(rng):
    d, k, s = 4, 3, 2
    blocks = np.stack([np.cov(rng.normal(size=(d, 20))) + 0.1 * np.eye(d) for _ in range(k)])
    return TotalVariabilityModel(rng.random((d, k)) + 0.01, rng.normal(size=(k, d, s)),
                                 CovarianceBlocks(blocks, 0.0),
                                 {"lambda": "0.1", "epsilon": "1e-12", "nmf_seed": "3"})


def test_model_round_trip(tmp_path, model):
    save_model(tmp_path / "b", model)
    back = load_model(tmp_path / "b")
    assert back.w_ubm.tobytes() == model.w_ubm.tobytes()
    assert back.T.tobytes() == model.T.tobytes()
    assert back.sigma.blocks.tobytes() == model.sigma.blocks.tobytes()
    assert back.meta["lambda"] == "0.1" and back.meta["nmf_seed"] == "3"
    manifest = (tmp_path / "b" / "manifest").read_text().splitlines()
    assert manifest[:4] == ["format_version=1", "d=4", "k=3", "s=2"]
    assert {"lambda=0.1", "epsilon=1e-12"} <= set(manifest)
    assert any(line.startswith("created_by=") for line in manifest)
    # a second save reproduces identical bytes
    save_model(tmp_path / "c", back)
    for name in ["manifest", "w_ubm.mat", "t_block_2.mat", "sigma_block_0.mat"]:
        assert (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_missing_sigma_block(tmp_path, model):
    save_model(tmp_path / "b", model)
    (tmp_path / "b" / "sigma_block_0.mat").unlink()
    with pytest.raises(FormatError, match="sigma_block_0.mat"):
        load_model(tmp_path / "b")


def test_missing_t_block_is_dimension_mismatch(tmp_path, model):
    save_model(tmp_path / "b", model)
    (tmp_path / "b" / "t_block_2.mat").unlink()
    with pytest.raises(FormatError, match="dimension mismatch"):
        load_model(tmp_path / "b")


def test_shape_mismatch(tmp_path, model):
    save_model(tmp_path / "b", model)
    write_matrix(tmp_path / "b" / "t_block_1.mat", np.ones((4, 5)))
    with pytest.raises(FormatError, match="dimension mismatch"):
        load_model(tmp_path / "b")


def test_unsupported_version(tmp_path, model):
    save_model(tmp_path / "b", model)
    manifest = tmp_path / "b" / "manifest"
    manifest.write_text(manifest.read_text().replace("format_version=1", "format_version=2"))
    with pytest.raises(FormatError, match="format_version"):
        load_model(tmp_path / "b")


def test_overwrite_existing_bundle(tmp_path, model):
    save_model(tmp_path / "b", model)
    model.T[:] = 0.0
    save_model(tmp_path / "b", model)
    assert np.all(load_model(tmp_path / "b").T == 0)
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


def test_ubm_bundle(tmp_path, rng):
    W = rng.random((5, 2)) + 0.1
    save_ubm(tmp_path / "u", W, {"lambda": "0.5"})
    back, fields = load_ubm(tmp_path / "u")
    assert back.tobytes() == W.tobytes()
    assert fields["lambda"] == "0.5" and fields["k"] == "2"
    with pytest.raises(FormatError, match="'s'"):
        load_model(tmp_path / "u")


def test_missing_manifest(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FormatError, match="manifest"):
        load_model(tmp_path / "empty")
