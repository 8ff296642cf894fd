import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mtlopm.dsp import EqualizerConfig
from mtlopm.errors import FileFormatError, OutOfGrid
from mtlopm.features import (Dataset, DatasetSpec, LabeledExample, build_dataset,
                             compute_histogram, decode_osnr, encode_targets, frame_tuples, load_dataset,
                             save_dataset, split_dataset, split_sizes)
from mtlopm.sigsim import ModulationFormat, SimConfig

GRID = tuple(float(v) for v in range(32, 46))
unit = st.floats(0.0, 1.0)


# histogram

def test_histogram_two_bins():
    assert compute_histogram([0.1, 0.1, 0.9], 2).counts.tolist() == [2, 1]


def test_histogram_closed_last_bin():
    assert compute_histogram([1.0], 4).counts.tolist() == [0, 0, 0, 1]


def test_histogram_edges_exact():
    # i/B lands in bin i for every edge, including values that are inexact in binary
    b = 10
    edges = [i / b for i in range(b)]
    assert compute_histogram(edges, b).counts.tolist() == [1] * b


def test_histogram_uniform():
    a = np.random.default_rng(0).random(10**6)
    c = compute_histogram(a, 100).counts
    assert np.all(np.abs(c - 10**4) <= 0.05 * 10**4)


def test_histogram_rejects_bad_input():
    with pytest.raises(ValueError):
        compute_histogram([0.5], 1)
    with pytest.raises(ValueError):
        compute_histogram([1.5], 4)


@given(arrays(float, st.integers(1, 500), elements=unit), st.integers(2, 300))
def test_histogram_counts_sum(a, b):
    h = compute_histogram(a, b)
    assert h.bin_count == b
    assert h.counts.sum() == a.size
    assert abs(h.relative().sum() - 1.0) <= 1e-12


# targets

@pytest.mark.parametrize("fmt,osnr,onehot,norm", [
    ("OOK", 32.0, [1, 0, 0], 0.0),
    ("PAM8", 45.0, [0, 0, 1], 1.0),
    ("PAM4", 38.5, [0, 1, 0], 0.5),
])
def test_encode_targets(fmt, osnr, onehot, norm):
    oh, n = encode_targets(fmt, osnr, GRID)
    assert oh.tolist() == onehot and n == norm


@pytest.mark.parametrize("osnr", [31.9, 45.5, math.inf])
def test_encode_out_of_grid(osnr):
    with pytest.raises(OutOfGrid):
        encode_targets("PAM4", osnr, GRID)


def test_encode_single_point_grid():
    assert encode_targets("OOK", 40.0, (40.0,))[1] == 0.0


@given(st.lists(st.floats(-50, 80), min_size=2, max_size=20, unique=True))
def test_encode_decode_round_trip(grid):
    grid = sorted(grid)
    for v in grid:
        _, n = encode_targets("PAM4", v, grid)
        assert abs(decode_osnr(n, grid) - v) <= 1e-12 * max(1.0, abs(v))


# spec and split

def test_spec_validation():
    for bad in (dict(osnr_grid=()), dict(osnr_grid=(35, 34)), dict(osnr_grid=(33, 33)), dict(frames_per_point=0),
                dict(bin_count=1), dict(formats=("OOK", "OOK")), dict(formats=("QAM",)), dict(test_frac=1.0)):
        with pytest.raises(ValueError):
            DatasetSpec(**bad)


def test_default_spec_size():
    assert DatasetSpec().size() == 420


@pytest.mark.parametrize("n,sizes", [(420, (360, 39, 21)), (20, (18, 1, 1)), (1, (1, 0, 0))])
def test_split_sizes(n, sizes):
    assert split_sizes(n) == sizes


@given(st.integers(1, 5000))
def test_split_sizes_exhaustive(n):
    tr, va, te = split_sizes(n)
    assert tr + va + te == n
    assert te == (5 * n) // 100
    assert va == (n - te) // 10


def _toy_dataset(n, n_formats=3, seed=0):
    rng = np.random.default_rng(n)
    ex = []
    for i in range(n):
        fmt = ModulationFormat.parse(("OOK", "PAM4", "PAM8")[i % n_formats])
        f = rng.random(5)
        ex.append(LabeledExample(f / f.sum(), encode_targets(fmt, 40.0, GRID)[0], 0.5, 40.0, fmt, i))
    return Dataset(ex, DatasetSpec(bin_count=5, seed=seed))


@settings(max_examples=30)
@given(st.integers(1, 400), st.integers(0, 2**32))
def test_split_disjoint_exhaustive(n, seed):
    ds = split_dataset(_toy_dataset(n), seed)
    parts = [set(ds.indices(p).tolist()) for p in ("train", "val", "test")]
    assert set().union(*parts) == set(range(n))
    assert sum(map(len, parts)) == n
    tr, va, te = split_sizes(n)
    assert ds.counts() == {"train": tr, "val": va, "test": te}


def test_split_determinism_and_variation():
    ds = _toy_dataset(420)
    a = split_dataset(ds, 5).partition
    assert a == split_dataset(ds, 5).partition
    distinct = {tuple(split_dataset(ds, s).partition) for s in range(20)}
    assert len(distinct) >= 19


def test_split_uniform_permutation():
    # each example lands in test with probability 21/420 over many seeds
    ds = _toy_dataset(420)
    hits = np.zeros(420)
    n_seeds = 400
    for s in range(n_seeds):
        hits += np.array([p == "test" for p in split_dataset(ds, s).partition])
    p = 21 / 420
    sd = math.sqrt(n_seeds * p * (1 - p))
    assert abs(hits.mean() - n_seeds * p) < 1e-9
    assert np.max(np.abs(hits - n_seeds * p)) < 6 * sd


def test_stratified_split():
    ds = split_dataset(_toy_dataset(420), 1, stratified=True)
    for k in range(3):
        tags = [p for p, e in zip(ds.partition, ds.examples) if e.fmt.index == k]
        assert tags.count("test") == 7 and tags.count("val") == 13


# building

def test_minimal_dataset():
    spec = DatasetSpec(osnr_grid=(40.0,), formats=("PAM4",), frames_per_point=1, bin_count=20)
    ds = build_dataset(spec, SimConfig(n_symbols=200))
    assert len(ds) == 1
    assert ds.examples[0].fmt is ModulationFormat.PAM4 and ds.examples[0].osnr_norm == 0.0


@settings(max_examples=5, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.lists(st.sampled_from(["OOK", "PAM4", "PAM8"]), min_size=1,
                                                       max_size=3, unique=True))
def test_dataset_size_identity(n_grid, fpp, formats):
    spec = DatasetSpec(osnr_grid=tuple(33.0 + 2 * i for i in range(n_grid)), formats=tuple(formats),
                       frames_per_point=fpp, bin_count=10)
    ds = build_dataset(spec, SimConfig(n_symbols=150))
    assert len(ds) == n_grid * len(formats) * fpp == spec.size()


def test_canonical_order(small_bank):
    spec = small_bank.spec
    expected = [(f.value, o, k) for f, _, o, k in frame_tuples(spec)]
    assert small_bank.keys == expected
    assert [k[0] for k in expected[:3]] == ["OOK"] * 3


def test_bank_features_normalized(small_bank):
    for b in (2, 50, 300):
        ds = small_bank.dataset(bin_count=b)
        X, Y, on, od = ds.arrays()
        assert X.shape == (len(ds), b)
        np.testing.assert_allclose(X.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.all(Y.sum(axis=1) == 1)
        assert np.all((on >= 0) & (on <= 1))


def test_raw_count_mode(small_bank):
    X = small_bank.dataset(relative_frequency=False).arrays()[0]
    assert np.all(X == np.round(X))
    assert len(set(X.sum(axis=1))) == 1


def test_build_deterministic(small_bank):
    from conftest import SMALL_SIM
    from mtlopm.features import build_frame_bank
    again = build_frame_bank(small_bank.spec, SMALL_SIM)
    a = small_bank.dataset().arrays()[0]
    assert np.array_equal(a, again.dataset().arrays()[0])


def test_parallel_build_matches_serial(small_bank):
    from conftest import SMALL_SIM
    from mtlopm.features import build_frame_bank
    spec = DatasetSpec(osnr_grid=(32.0, 44.0), frames_per_point=2, bin_count=50, seed=3)
    serial = build_frame_bank(spec, SMALL_SIM).dataset().arrays()[0]
    parallel = build_frame_bank(spec, SMALL_SIM, jobs=2).dataset().arrays()[0]
    assert np.array_equal(serial, parallel)


def test_frame_error_names_tuple():
    from mtlopm.errors import FrameError
    spec = DatasetSpec(osnr_grid=(40.0,), formats=("OOK",), frames_per_point=1, bin_count=10)
    with pytest.raises(FrameError) as info:
        # 64 symbols resample to 128 samples, too short for a 13-tap CMA
        build_dataset(spec, SimConfig(n_symbols=64), EqualizerConfig(n_taps=13))
    assert info.value.tuple == ("OOK", 40.0, 0)


# persistence

def test_round_trip(tmp_path, small_bank):
    ds = split_dataset(small_bank.dataset(), 4)
    save_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    assert back.partition == ds.partition
    assert back.spec == ds.spec
    assert back.pipeline_config == ds.pipeline_config
    for a, b in zip(ds.examples, back.examples):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.format_onehot, b.format_onehot)
        assert a.osnr_norm == b.osnr_norm and a.osnr_db == b.osnr_db and a.fmt is b.fmt
        assert a.frame_index == b.frame_index


def _write(tmp_path, small_bank):
    p = tmp_path / "d.csv"
    save_dataset(small_bank.dataset(), p)
    return p


def test_load_bin_mismatch_names_row(tmp_path, small_bank):
    p = _write(tmp_path, small_bank)
    lines = p.read_text().splitlines()
    lines[3] = lines[3].rsplit(",", 1)[0]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(FileFormatError, match=r":4:"):
        load_dataset(p)


def test_load_empty_file(tmp_path, small_bank):
    p = _write(tmp_path, small_bank)
    p.write_text("")
    with pytest.raises(FileFormatError, match="empty"):
        load_dataset(p)


def test_load_header_only(tmp_path, small_bank):
    p = _write(tmp_path, small_bank)
    p.write_text(p.read_text().splitlines()[0] + "\n")
    with pytest.raises(FileFormatError, match="no data"):
        load_dataset(p)


def test_load_bad_value(tmp_path, small_bank):
    p = _write(tmp_path, small_bank)
    lines = p.read_text().splitlines()
    lines[2] = lines[2].replace(",", ",x", 1)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(FileFormatError, match=r":3:"):
        load_dataset(p)


def test_load_missing_sidecar(tmp_path, small_bank):
    p = _write(tmp_path, small_bank)
    p.with_suffix(".json").unlink()
    with pytest.raises(FileFormatError, match="sidecar"):
        load_dataset(p)
