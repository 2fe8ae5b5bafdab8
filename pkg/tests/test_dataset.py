import hashlib

import numpy as np
import pytest

from starris.channel import sample_channels
from starris.dataset import ChannelDataset, generate_dataset, load_dataset, record_length, write_dataset

from conftest import small_config


def test_round_trip_is_lossless(tmp_path, cfg):
    ds = generate_dataset(cfg, 10, tmp_path / "d.bin")
    assert len(ds) == 10 and ds.cfg == cfg
    for i in range(10):
        ref = sample_channels(cfg, index=i)
        got = ds[i]
        # records are stored as complex64, so compare against the rounded draw
        np.testing.assert_array_equal(got.g, ref.g.astype(np.complex64))
        np.testing.assert_array_equal(got.h, ref.h.astype(np.complex64))
        assert got.n_users_t_region == cfg.n_users_t_region


def test_rewrite_is_byte_identical(tmp_path, cfg):
    ds = generate_dataset(cfg, 4, tmp_path / "a.bin")
    write_dataset(tmp_path / "b.bin", cfg, [ds[i] for i in range(4)])
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_batched_equivalent_channel_matches_per_sample(tmp_path, cfg):
    ds = generate_dataset(cfg, 3, tmp_path / "d.bin")
    batch = ds.h_equiv([0, 2])
    np.testing.assert_array_equal(batch[1], ds[2].h_equiv)
    assert batch.shape == (2, cfg.n_ris * cfg.n_elems_per_ris, cfg.n_users, cfg.n_tx)


def test_paper_scale_split():
    cfg = small_config()
    ds = ChannelDataset(None, cfg, 50000, 0, np.zeros((50000, record_length(cfg)), np.complex64))
    train, val = ds.split(0.1)
    assert (len(train), len(val)) == (45000, 5000)
    assert np.array_equal(np.concatenate([train, val]), np.arange(50000))


def _hashes(ds):
    return [hashlib.sha256(np.asarray(ds.records[i]).tobytes()).hexdigest() for i in range(len(ds))]


def test_distinct_seeds_differ_in_every_realization(tmp_path):
    a = generate_dataset(small_config(rng_seed=1), 10, tmp_path / "a.bin")
    b = generate_dataset(small_config(rng_seed=2), 10, tmp_path / "b.bin")
    assert not set(_hashes(a)) & set(_hashes(b))


def test_same_seed_reproduces(tmp_path, cfg):
    a = generate_dataset(cfg, 5, tmp_path / "a.bin")
    b = generate_dataset(cfg, 5, tmp_path / "b.bin")
    assert _hashes(a) == _hashes(b)


def test_index_out_of_range(tmp_path, cfg):
    ds = generate_dataset(cfg, 2, tmp_path / "d.bin")
    with pytest.raises(IndexError):
        ds[2]


def test_io_errors_name_the_path(tmp_path, cfg):
    bad = tmp_path / "missing" / "d.bin"
    with pytest.raises(OSError, match="missing"):
        generate_dataset(cfg, 1, bad)
    with pytest.raises(OSError, match="nothere"):
        load_dataset(tmp_path / "nothere.bin")
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"hello")
    with pytest.raises(ValueError, match="junk.bin"):
        load_dataset(junk)


def test_rejects_zero_samples(tmp_path, cfg):
    with pytest.raises(ValueError):
        generate_dataset(cfg, 0, tmp_path / "d.bin")


def test_shape_mismatch_on_write(tmp_path, cfg):
    other = sample_channels(small_config(n_tx=2), index=0)
    with pytest.raises(ValueError, match="shapes"):
        write_dataset(tmp_path / "d.bin", cfg, [other])
