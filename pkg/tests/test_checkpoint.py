"""Binary checkpoint format round trips and corruption handling."""

from __future__ import annotations

import numpy as np
import pytest

from feddrop import Architecture, DataError, init_params, load_checkpoint, save_checkpoint
from reference import trees_equal


def test_round_trip_exact(tmp_path):
    arch = Architecture(5, 7, 9, 3, 4)
    params = init_params(arch, 1)
    snapshot = init_params(arch, 2)
    params.blocks[1].b1[...] = np.linspace(-1, 1, 9)
    path = tmp_path / "model.bin"
    save_checkpoint(path, params, snapshot)
    loaded_params, loaded_snapshot = load_checkpoint(path)
    assert trees_equal(loaded_params, params)
    assert trees_equal(loaded_snapshot, snapshot)


def test_rerun_is_byte_identical(tmp_path):
    arch = Architecture(3, 4, 5, 1, 2)
    params = init_params(arch, 3)
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(a, params, params)
    save_checkpoint(b, params, params)
    assert a.read_bytes() == b.read_bytes()


def test_rejects_bad_magic(tmp_path):
    arch = Architecture(3, 4, 5, 1, 2)
    path = tmp_path / "model.bin"
    save_checkpoint(path, init_params(arch, 0), init_params(arch, 0))
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_rejects_truncation(tmp_path):
    arch = Architecture(3, 4, 5, 1, 2)
    path = tmp_path / "model.bin"
    save_checkpoint(path, init_params(arch, 0), init_params(arch, 0))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_rejects_incongruent_snapshot(tmp_path):
    params = init_params(Architecture(3, 4, 5, 1, 2), 0)
    other = init_params(Architecture(3, 4, 6, 1, 2), 0)
    with pytest.raises(DataError):
        save_checkpoint(tmp_path / "model.bin", params, other)
