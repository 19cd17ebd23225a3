import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mbl_dann.dataset import (
    DEFAULT_GRID,
    DELOCALIZED,
    LABELED,
    MBL,
    RECORDS_PER_SET,
    UNLABELED,
    EigenstateRecord,
    GridSpec,
    RecordSet,
    allocate_realizations,
    arith_grid,
    build_labeled_set,
    build_unlabeled_set,
    labeled_manifest,
    load_records,
    manifest_path,
    read_manifest_text,
    save_records,
    sign_fix,
    unlabeled_manifest,
)
from mbl_dann.errors import (
    CorruptHeaderError,
    CountMismatchError,
    InvalidArgumentError,
    TruncatedPayloadError,
    VersionMismatchError,
)

TINY = GridSpec(delocalized_h=(0.1, 0.3), mbl_h=(7.0, 7.5, 8.0), unlabeled_h=(1.0, 3.0),
                eps=(0.3, 0.5), k=4)


def test_default_grids():
    assert len(DEFAULT_GRID.delocalized_h) == 9
    assert DEFAULT_GRID.delocalized_h[0] == 0.1 and DEFAULT_GRID.delocalized_h[-1] == 0.5
    assert len(DEFAULT_GRID.mbl_h) == 11
    assert len(DEFAULT_GRID.unlabeled_h) == 33
    assert DEFAULT_GRID.unlabeled_h[-1] == 6.9
    assert len(DEFAULT_GRID.eps) == 19
    assert arith_grid(0.5, 7.0, 0.2, inclusive=False) == DEFAULT_GRID.unlabeled_h


def test_one_realization_per_delocalized_point_n12():
    scale = 9 * 19 * 50 / RECORDS_PER_SET
    m = labeled_manifest(scale, 0, n_sites=12)
    deloc, mbl = m.groups
    assert deloc.realizations == (1,) * 9
    assert m.counts == {"delocalized": 8550, "mbl": 8550}
    assert min(deloc.h_values) >= 0.1 and max(deloc.h_values) <= 0.5
    assert min(mbl.h_values) >= 7.0


def test_full_scale_targets():
    m = labeled_manifest(1.0, 0)
    block = len(DEFAULT_GRID.eps) * DEFAULT_GRID.k  # records added by one realization
    assert m.counts["delocalized"] == m.counts["mbl"]
    assert abs(m.counts["mbl"] - RECORDS_PER_SET) <= block / 2
    u = unlabeled_manifest(1.0, 0)
    assert abs(u.counts[UNLABELED] - RECORDS_PER_SET) <= len(DEFAULT_GRID.unlabeled_h) * block / 2


def test_unlabeled_count_formula():
    u = unlabeled_manifest(1.0, 0, realizations=3)
    assert u.counts == {UNLABELED: 33 * 19 * 50 * 3}


@pytest.mark.parametrize("realizations", [1, 2, 5])
def test_explicit_realizations_floor(realizations):
    m = labeled_manifest(1.0, 0, grid=DEFAULT_GRID, realizations=realizations)
    for g in m.groups:
        assert min(g.realizations) >= realizations
    assert m.counts["delocalized"] == m.counts["mbl"]


@given(total=st.integers(0, 500), n=st.integers(1, 40))
def test_allocation(total, n):
    alloc = allocate_realizations(total, n)
    assert len(alloc) == n and sum(alloc) == total
    assert max(alloc) - min(alloc) <= 1


@pytest.mark.parametrize("scale", [0, -0.1, 1.5])
def test_scale_bounds(scale):
    with pytest.raises(InvalidArgumentError):
        labeled_manifest(scale, 0)


def test_sign_fix_examples():
    np.testing.assert_array_equal(sign_fix(np.array([0.6, -0.8])), [-0.6, 0.8])
    np.testing.assert_array_equal(sign_fix(np.array([0.8, 0.6])), [0.8, 0.6])
    with pytest.raises(InvalidArgumentError):
        sign_fix(np.zeros(3))


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1, 1)))
def test_sign_fix_idempotent(v):
    if not np.any(v):
        return
    once = sign_fix(v)
    np.testing.assert_array_equal(sign_fix(once), once)
    assert once[np.argmax(np.abs(once))] > 0
    np.testing.assert_array_equal(np.abs(once), np.abs(v))


@pytest.fixture(scope="module")
def tiny_sets():
    labeled, lm = build_labeled_set(1.0, 42, n_sites=6, grid=TINY, realizations=2)
    unlabeled, um = build_unlabeled_set(1.0, 42, n_sites=6, grid=TINY, realizations=1)
    return labeled, lm, unlabeled, um


def test_labeled_set_contents(tiny_sets):
    labeled, lm, _, _ = tiny_sets
    assert labeled.counts() == lm.counts
    assert labeled.counts()["delocalized"] == labeled.counts()["mbl"]
    assert np.all(labeled.domain == 0)
    assert np.all(labeled.h[labeled.phase == DELOCALIZED] <= 0.5)
    assert np.all(labeled.h[labeled.phase == MBL] >= 7.0)
    assert labeled.dim == 20
    norms = np.linalg.norm(labeled.coefficients.astype(float), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-5)
    big = np.abs(labeled.coefficients).argmax(axis=1)
    assert np.all(labeled.coefficients[np.arange(len(labeled)), big] > 0)
    dist = np.abs(labeled.eps_actual - labeled.eps_target).reshape(-1, TINY.k)
    assert np.all(np.diff(dist, axis=1) >= 0)  # closest first within each realization


def test_unlabeled_set_contents(tiny_sets):
    _, _, unlabeled, um = tiny_sets
    assert len(unlabeled) == 2 * 2 * 4
    assert np.all(unlabeled.phase == -1)
    assert all(r.phase_label is None and r.domain_tag == UNLABELED for r in unlabeled)


def test_regenerating_is_deterministic(tiny_sets):
    labeled, *_ = tiny_sets
    again, _ = build_labeled_set(1.0, 42, n_sites=6, grid=TINY, realizations=2)
    assert again.equals(labeled)
    other, _ = build_labeled_set(1.0, 43, n_sites=6, grid=TINY, realizations=2)
    assert not other.equals(labeled)


def test_files_byte_identical(tmp_path, tiny_sets):
    labeled, lm, *_ = tiny_sets
    again, _ = build_labeled_set(1.0, 42, n_sites=6, grid=TINY, realizations=2)
    save_records(tmp_path / "a.mbls", labeled, lm)
    save_records(tmp_path / "b.mbls", again, lm)
    assert (tmp_path / "a.mbls").read_bytes() == (tmp_path / "b.mbls").read_bytes()


def test_round_trip_with_manifest(tmp_path, tiny_sets):
    labeled, lm, *_ = tiny_sets
    path = tmp_path / "labeled.mbls"
    stored = save_records(path, labeled, lm)
    back, manifest = load_records(path)
    assert back.equals(labeled)
    assert manifest.counts == lm.counts
    assert manifest.groups == lm.groups
    text = read_manifest_text(manifest_path(path))
    assert text["kind"] == LABELED
    assert int(text["count.mbl"]) == lm.counts["mbl"]
    assert int(text["record_bytes"]) == stored.record_bytes
    size = path.stat().st_size
    assert size == stored.header_bytes + len(labeled) * stored.record_bytes


def _random_records(n, n_sites=4, seed=0):
    rng = np.random.default_rng(seed)
    dim = 6
    out = []
    for i in range(n):
        labeled = i % 3 != 0
        out.append(EigenstateRecord(
            n_sites, float(rng.uniform(0, 8)), float(rng.uniform()), float(rng.uniform()),
            float(rng.normal()), int(rng.integers(0, 2**63)) * 2 + 1,
            rng.normal(size=dim).astype(np.float32),
            LABELED if labeled else UNLABELED,
            int(rng.integers(0, 2)) if labeled else None,
        ))
    return out


def test_random_records_round_trip(tmp_path):
    records = _random_records(100)
    save_records(tmp_path / "r.mbls", records)
    back, _ = load_records(tmp_path / "r.mbls")
    assert len(back) == 100
    for a, b in zip(records, back):
        assert (a.h, a.eps_target, a.eps_actual, a.energy, a.seed) == (
            b.h, b.eps_target, b.eps_actual, b.energy, b.seed)
        assert (a.domain_tag, a.phase_label) == (b.domain_tag, b.phase_label)
        assert a.coefficients.tobytes() == b.coefficients.tobytes()


def test_empty_round_trip(tmp_path):
    save_records(tmp_path / "e.mbls", RecordSet.empty(8))
    back, manifest = load_records(tmp_path / "e.mbls")
    assert len(back) == 0 and back.dim == 70
    assert manifest.counts == {} and manifest.n_records == 0


@pytest.fixture
def saved(tmp_path):
    path = tmp_path / "r.mbls"
    save_records(path, _random_records(10))
    return path


def test_truncated_payload(saved):
    data = saved.read_bytes()
    saved.write_bytes(data[:-1])
    with pytest.raises(TruncatedPayloadError):
        load_records(saved)


def test_trailing_bytes(saved):
    saved.write_bytes(saved.read_bytes() + b"\0")
    with pytest.raises(CountMismatchError):
        load_records(saved)


def test_bad_magic_and_checksum(saved):
    data = bytearray(saved.read_bytes())
    saved.write_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(CorruptHeaderError):
        load_records(saved)
    data[20] ^= 0xFF  # inside the JSON header
    saved.write_bytes(bytes(data))
    with pytest.raises(CorruptHeaderError):
        load_records(saved)
    saved.write_bytes(bytes(data[:5]))
    with pytest.raises(CorruptHeaderError):
        load_records(saved)


def test_version_mismatch(saved):
    data = bytearray(saved.read_bytes())
    data[4] = 99
    saved.write_bytes(bytes(data))
    with pytest.raises(VersionMismatchError):
        load_records(saved)


def test_mixed_sizes_rejected():
    a = _random_records(2, n_sites=4)
    b = EigenstateRecord(6, 0.1, 0.5, 0.5, 0.0, 1, np.ones(20, np.float32), LABELED, 0)
    with pytest.raises(InvalidArgumentError):
        RecordSet.from_records(a + [b])
