import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from f2s import conndata
from f2s.conndata import (
    Connectome,
    LabeledVolume,
    SubjectRecord,
    TimeSeriesPanel,
    build_block_atlas,
    group_difference_edges,
    load_connectome,
    load_dataset,
    load_matrix,
    load_timeseries,
    load_volume,
    paint_volume,
    parcellate,
    save_matrix,
    save_volume,
    synth_dataset,
    write_dataset,
)
from f2s.errors import AtlasCoverageError, ConfigError, DataError, FormatError


# domain types -------------------------------------------------------------------


def test_connectome_validation_names_asymmetric_entry():
    values = np.zeros((3, 3))
    values[0, 1] = 0.5
    with pytest.raises(DataError, match=r"\(0, 1\)"):
        Connectome(values)


def test_connectome_validation_rejects_nonzero_diagonal():
    values = np.zeros((3, 3))
    values[1, 1] = 0.2
    with pytest.raises(DataError, match=r"\(1, 1\)"):
        Connectome(values)


def test_connectome_validation_rejects_out_of_range():
    values = np.zeros((3, 3))
    values[0, 1] = values[1, 0] = 1.5
    with pytest.raises(DataError, match="out of"):
        Connectome(values)


def test_subject_record_requires_some_functional_data():
    with pytest.raises(DataError):
        SubjectRecord(id="x", group="NC")


# parcellation -------------------------------------------------------------------


def test_parcellate_single_voxel_rois_verbatim():
    atlas = np.array([[[1, 2]]], dtype=np.int32)  # 1x1x2 grid
    signal = np.zeros((1, 1, 2, 3))
    signal[0, 0, 0] = [1.0, 2.0, 3.0]
    signal[0, 0, 1] = [4.0, 5.0, 6.0]
    panel = parcellate(LabeledVolume(signal, atlas))
    assert np.array_equal(panel.values, [[1, 2, 3], [4, 5, 6]])


def test_parcellate_two_voxel_mean():
    atlas = np.array([[[1, 1]]], dtype=np.int32)
    signal = np.zeros((1, 1, 2, 1))
    signal[0, 0, 0, 0] = 2.0
    signal[0, 0, 1, 0] = 4.0
    panel = parcellate(LabeledVolume(signal, atlas))
    assert panel.values[0, 0] == 3.0


def test_parcellate_missing_label_reports_it():
    atlas = np.array([[[1, 3]]], dtype=np.int32)  # label 2 absent
    signal = np.zeros((1, 1, 2, 2))
    with pytest.raises(AtlasCoverageError, match=r"\[2\]"):
        parcellate(LabeledVolume(signal, atlas))


def test_parcellate_round_trips_painted_series():
    rng = np.random.default_rng(0)
    series = rng.standard_normal((5, 7))
    atlas = build_block_atlas(5)
    vol = paint_volume(series, atlas)
    out = parcellate(vol).values
    assert np.max(np.abs(out - series)) <= 1e-12


def test_parcellate_is_linear_in_signal():
    rng = np.random.default_rng(1)
    atlas = build_block_atlas(4)
    shape = atlas.shape + (3,)
    v1 = rng.standard_normal(shape)
    v2 = rng.standard_normal(shape)
    alpha = 1.7
    lhs = parcellate(LabeledVolume(alpha * v1 + v2, atlas)).values
    rhs = alpha * parcellate(LabeledVolume(v1, atlas)).values + parcellate(
        LabeledVolume(v2, atlas)
    ).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_parcellate_permutation_equivariant():
    rng = np.random.default_rng(2)
    n = 5
    atlas = build_block_atlas(n)
    signal = rng.standard_normal(atlas.shape + (4,))
    base = parcellate(LabeledVolume(signal, atlas)).values
    perm = rng.permutation(n)
    relabel = np.zeros(n + 1, dtype=np.int32)
    relabel[1:] = perm + 1  # label i -> perm[i-1] + 1
    permuted = parcellate(LabeledVolume(signal, relabel[atlas])).values
    assert np.array_equal(permuted[perm], base)


# synthetic dataset ---------------------------------------------------------------


def test_synth_dataset_deterministic_bitwise():
    a = synth_dataset(4, 8, 16, seed=3, with_volumes=True)
    b = synth_dataset(4, 8, 16, seed=3, with_volumes=True)
    for ra, rb in zip(a, b):
        assert ra.id == rb.id and ra.group == rb.group
        assert np.array_equal(ra.empirical_sc.values, rb.empirical_sc.values)
        assert np.array_equal(ra.timeseries.values, rb.timeseries.values)
        assert np.array_equal(ra.volume.signal, rb.volume.signal)


def test_synth_dataset_invariants_and_groups():
    records = synth_dataset(10, 8, 16, seed=1, with_volumes=False)
    assert sum(1 for r in records if r.group == "NC") == 5
    for rec in records:
        v = rec.empirical_sc.values
        assert np.array_equal(v, v.T)
        assert np.all(np.diag(v) == 0.0)
        assert v.min() >= 0.0 and v.max() <= 1.0


def test_synth_dataset_rejects_bad_dims():
    with pytest.raises(ConfigError):
        synth_dataset(4, 3, 64, seed=0)
    with pytest.raises(ConfigError):
        synth_dataset(4, 8, 8, seed=0)  # s < 2n
    with pytest.raises(ConfigError):
        synth_dataset(1, 8, 16, seed=0)
    with pytest.raises(ConfigError):
        synth_dataset(4, 8, 16, seed=0, grid=(1, 1, 1))


def test_synth_dataset_correlation_gap():
    # planted edges show visibly higher series correlation than non-edges
    records = synth_dataset(50, 16, 64, seed=7, with_volumes=False)
    gaps = []
    for rec in records:
        c = np.corrcoef(rec.timeseries.values)
        a = rec.empirical_sc.values
        iu = np.triu_indices(a.shape[0], 1)
        edges = a[iu] > 0.3
        gaps.append(c[iu][edges].mean() - c[iu][~edges].mean())
    assert float(np.mean(gaps)) > 0.1


def test_group_difference_edges_fixed_and_distinct():
    edges = group_difference_edges(16, seed=0)
    assert edges == group_difference_edges(16, seed=0)
    assert len(edges) == 10
    assert len(set(edges)) == 10
    assert all(i < j for i, j in edges)


def test_mci_group_strengthens_planted_edges():
    records = synth_dataset(40, 16, 32, seed=5, with_volumes=False)
    edges = group_difference_edges(16, seed=5)
    nc = np.mean([r.empirical_sc.values for r in records if r.group == "NC"], axis=0)
    mci = np.mean([r.empirical_sc.values for r in records if r.group == "MCI"], axis=0)
    diff = mci - nc
    for i, j in edges:
        assert diff[i, j] > 0.1


# matrix CSV ---------------------------------------------------------------------


def test_matrix_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(4)
    m = rng.standard_normal((5, 7))
    path = tmp_path / "m.csv"
    save_matrix(path, m)
    assert np.array_equal(load_matrix(path), m)


def test_matrix_two_by_two_serialization(tmp_path):
    path = tmp_path / "m.csv"
    save_matrix(path, np.array([[0.0, 0.5], [0.5, 0.0]]))
    assert path.read_text() == "0,0.5\n0.5,0\n"


def test_load_connectome_rejects_asymmetry_with_indices(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0,0.5\n0.25,0\n")
    with pytest.raises(DataError, match=r"\(0, 1\)"):
        load_connectome(path)


def test_load_matrix_rejects_ragged(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("0,1\n0\n")
    with pytest.raises(FormatError, match="line 2"):
        load_matrix(path)


def test_timeseries_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    panel = TimeSeriesPanel(rng.standard_normal((3, 9)))
    path = tmp_path / "ts.csv"
    save_matrix(path, panel)
    assert np.array_equal(load_timeseries(path).values, panel.values)


# binary volume format --------------------------------------------------------------


def test_volume_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(5)
    atlas = build_block_atlas(4)
    vol = paint_volume(rng.standard_normal((4, 6)), atlas)
    path = tmp_path / "v.f2sv"
    save_volume(path, vol)
    back = load_volume(path)
    assert np.array_equal(back.signal, vol.signal)
    assert np.array_equal(back.atlas, vol.atlas)


def test_volume_file_length_1x1x1x2(tmp_path):
    vol = LabeledVolume(np.ones((1, 1, 1, 2)), np.ones((1, 1, 1), dtype=np.int32))
    path = tmp_path / "tiny.f2sv"
    save_volume(path, vol)
    # magic 4 + version 2 + dims 16 + atlas 4 + signal 16
    assert path.stat().st_size == 42


def test_volume_bad_magic(tmp_path):
    path = tmp_path / "bad.f2sv"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(FormatError, match="byte 0"):
        load_volume(path)


def test_volume_truncated(tmp_path):
    vol = LabeledVolume(np.ones((1, 1, 1, 2)), np.ones((1, 1, 1), dtype=np.int32))
    path = tmp_path / "trunc.f2sv"
    save_volume(path, vol)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(FormatError, match="truncation"):
        load_volume(path)


def test_volume_bad_version(tmp_path):
    vol = LabeledVolume(np.ones((1, 1, 1, 2)), np.ones((1, 1, 1), dtype=np.int32))
    path = tmp_path / "ver.f2sv"
    save_volume(path, vol)
    data = bytearray(path.read_bytes())
    data[4] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="version"):
        load_volume(path)


# dataset on disk -------------------------------------------------------------------


def test_write_and_load_dataset_round_trip(tmp_path):
    records = synth_dataset(4, 8, 16, seed=2, with_volumes=True)
    manifest = write_dataset(records, tmp_path / "data", meta={"seed": 2})
    loaded = load_dataset(manifest)
    assert [r.id for r in loaded] == [r.id for r in records]
    for orig, back in zip(records, loaded):
        assert back.group == orig.group
        assert np.array_equal(back.empirical_sc.values, orig.empirical_sc.values)
        assert np.array_equal(back.timeseries.values, orig.timeseries.values)
        assert back.volume is None  # timeseries available, volume skipped


def test_load_dataset_from_directory_path(tmp_path):
    records = synth_dataset(2, 8, 16, seed=2, with_volumes=False)
    write_dataset(records, tmp_path / "data")
    loaded = load_dataset(tmp_path / "data")
    assert len(loaded) == 2


def test_volume_only_record_parcellates_on_demand(tmp_path):
    records = synth_dataset(2, 8, 16, seed=4, with_volumes=True)
    for rec in records:
        rec_vol_only = SubjectRecord(
            id=rec.id, group=rec.group, volume=rec.volume,
            empirical_sc=rec.empirical_sc,
        )
        assert np.max(np.abs(rec_vol_only.features() - rec.timeseries.values)) <= 1e-12
