"""Data model, file formats, atlas parcellation, and the synthetic dataset.

The synthetic generator plants a per-subject connectivity matrix, drives a
stable linear dynamical system over it to obtain ROI time series, and paints
those series into a block-atlas 4-D volume, so the whole pipeline (volume ->
parcellation -> prediction -> analysis) has a known ground truth. Ten fixed
edges are strengthened in the MCI group to give the group-difference
analysis a planted answer.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AtlasCoverageError, ConfigError, DataError, FormatError

Array = np.ndarray

GROUP_NC = "NC"
GROUP_MCI = "MCI"
GROUPS = (GROUP_NC, GROUP_MCI)


# domain types ---------------------------------------------------------------


def validate_connectome(values: Array, check_range: bool = True) -> None:
    """Raise DataError naming the first offending entry, if any."""
    v = np.asarray(values)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise DataError(f"connectome must be square, got shape {v.shape}")
    if not np.isfinite(v).all():
        bad = np.argwhere(~np.isfinite(v))[0]
        raise DataError(f"non-finite connectome entry at ({bad[0]}, {bad[1]})")
    asym = v != v.T
    if asym.any():
        i, j = np.argwhere(asym)[0]
        raise DataError(
            f"asymmetric connectome: values[{i}][{j}]={v[i, j]!r} != "
            f"values[{j}][{i}]={v[j, i]!r} at ({i}, {j})"
        )
    diag = np.flatnonzero(np.diag(v))
    if diag.size:
        raise DataError(f"nonzero diagonal at ({diag[0]}, {diag[0]})")
    if check_range and ((v < 0.0) | (v > 1.0)).any():
        i, j = np.argwhere((v < 0.0) | (v > 1.0))[0]
        raise DataError(f"connectome entry out of [0, 1] at ({i}, {j}): {v[i, j]!r}")


@dataclass
class Connectome:
    """Symmetric zero-diagonal connectivity matrix with entries in [0, 1]."""

    values: Array

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        validate_connectome(self.values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class TimeSeriesPanel:
    """Per-ROI time series, one row per ROI."""

    values: Array

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"time series panel must be 2-D, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError("time series panel contains non-finite values")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def s(self) -> int:
        return self.values.shape[1]


@dataclass
class LabeledVolume:
    """4-D signal grid plus an integer atlas (0 = background, 1..n = ROIs)."""

    signal: Array
    atlas: Array

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        self.atlas = np.asarray(self.atlas, dtype=np.int32)
        if self.signal.ndim != 4:
            raise DataError(f"volume signal must be 4-D, got {self.signal.shape}")
        if self.atlas.shape != self.signal.shape[:3]:
            raise DataError(
                f"atlas shape {self.atlas.shape} does not match signal grid "
                f"{self.signal.shape[:3]}"
            )
        if self.atlas.min() < 0:
            raise DataError("atlas labels must be non-negative")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.signal.shape

    @property
    def n(self) -> int:
        return int(self.atlas.max())


@dataclass
class SubjectRecord:
    id: str
    group: str
    timeseries: TimeSeriesPanel | None = None
    volume: LabeledVolume | None = None
    empirical_sc: Connectome | None = None

    def __post_init__(self):
        if self.timeseries is None and self.volume is None:
            raise DataError(f"subject {self.id}: needs a time series or a volume")
        if self.group not in GROUPS:
            raise DataError(f"subject {self.id}: unknown group {self.group!r}")

    def features(self) -> Array:
        """ROI time series, parcellating the volume if that is all we have."""
        if self.timeseries is not None:
            return self.timeseries.values
        return parcellate(self.volume).values


# parcellation ---------------------------------------------------------------


def parcellate(volume: LabeledVolume) -> TimeSeriesPanel:
    """Mean signal per atlas label at each time point. No parameters.

    Entry (i, tau) is the mean over all voxels labeled i+1 at time tau.
    Labels in 1..n with no voxels raise AtlasCoverageError.
    """
    n = volume.n
    if n < 1:
        raise AtlasCoverageError("atlas contains no labeled voxels")
    s = volume.signal.shape[3]
    labels = volume.atlas.reshape(-1)
    counts = np.bincount(labels, minlength=n + 1)
    missing = [int(i) for i in range(1, n + 1) if counts[i] == 0]
    if missing:
        raise AtlasCoverageError(f"atlas labels with zero voxels: {missing}")
    sums = np.zeros((n + 1, s))
    np.add.at(sums, labels, volume.signal.reshape(-1, s))
    return TimeSeriesPanel(sums[1:] / counts[1:, None])


# synthetic dataset ----------------------------------------------------------

# Planted-SC model: a cohort backbone graph (~20% density, near-regular)
# shared by all subjects, with per-subject edge rewiring and weight jitter
# over a weak background. Real cohorts share most connectivity structure;
# the rewired edges are the subject-specific part a predictor must read
# from the time series. Values are bounded so the MCI boost stays in [0, 1].
EDGE_DENSITY = 0.2
EDGE_WEIGHT_RANGE = (0.4, 0.7)
EDGE_JITTER = 0.06
REWIRE_FRACTION = 0.05
BACKGROUND_RANGE = (0.0, 0.04)
MCI_EDGE_BOOST = 0.22
N_GROUP_DIFF_EDGES = 10
# Linear dynamics: x_{tau+1} = rho * A_hat x_tau + nu * noise, with A_hat the
# self-loop degree-normalized planted SC and rho scaled so the spectral
# radius of rho * A_hat is SPECTRAL_RADIUS. The lazy self-loop weight matters:
# without it the recurrence correlates node pairs only through even-length
# paths and direct edges leave no first-order trace in the series.
SPECTRAL_RADIUS = 0.95
DYNAMICS_NOISE = 0.25
DYNAMICS_SELF_LOOP = 2.0
BURN_IN = 100
_BLOCK = (2, 2, 1)  # voxels per ROI block; 4 voxels makes block means exact


def normalized_adjacency(values: Array, self_loop: float = 1.0) -> Array:
    """Symmetric degree normalization with self-loops over rectified weights."""
    a = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
    m = a + self_loop * np.eye(a.shape[0])
    d = m.sum(axis=1)
    inv = 1.0 / np.sqrt(d)
    return m * np.outer(inv, inv)


def _atlas_grid(n: int, grid: tuple[int, int, int] | None) -> tuple[int, int, int]:
    if grid is None:
        gx = int(math.ceil(n ** (1.0 / 3.0)))
        gy = int(math.ceil(math.sqrt(n / gx)))
        gz = int(math.ceil(n / (gx * gy)))
        return gx, gy, gz
    gx, gy, gz = grid
    if gx * gy * gz < n:
        raise ConfigError(
            f"atlas grid {grid} holds {gx * gy * gz} blocks, fewer than n={n} ROIs"
        )
    return gx, gy, gz


def build_block_atlas(n: int, grid: tuple[int, int, int] | None = None) -> Array:
    """Integer atlas with each ROI a contiguous voxel block; 0 = background."""
    gx, gy, gz = _atlas_grid(n, grid)
    bx, by, bz = _BLOCK
    atlas = np.zeros((gx * bx, gy * by, gz * bz), dtype=np.int32)
    for k in range(n):
        ix = k % gx
        iy = (k // gx) % gy
        iz = k // (gx * gy)
        atlas[
            ix * bx : (ix + 1) * bx,
            iy * by : (iy + 1) * by,
            iz * bz : (iz + 1) * bz,
        ] = k + 1
    return atlas


def paint_volume(series: Array, atlas: Array) -> LabeledVolume:
    """Write each ROI's series into its atlas block (no per-voxel noise)."""
    n, s = series.shape
    signal = np.zeros(atlas.shape + (s,))
    for k in range(1, n + 1):
        signal[atlas == k] = series[k - 1]
    return LabeledVolume(signal, atlas)


def _backbone(n: int, seed: int) -> tuple[Array, Array]:
    """Cohort backbone: a near-regular random graph at ~20% density with base
    weights, shared by every subject generated from the same seed."""
    rng = np.random.default_rng([seed, 5])
    deg = max(2, round(EDGE_DENSITY * (n - 1)))
    while True:
        stubs = np.repeat(np.arange(n), deg)
        rng.shuffle(stubs)
        pairs = stubs.reshape(-1, 2)
        adj = np.zeros((n, n), dtype=bool)
        ok = True
        for a, b in pairs:
            if a == b or adj[a, b]:
                ok = False
                break
            adj[a, b] = adj[b, a] = True
        if ok:
            break
    weights = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    w = rng.uniform(*EDGE_WEIGHT_RANGE, size=iu[0].size)
    weights[iu] = np.where(adj[iu], w, 0.0)
    weights += weights.T
    return adj, weights


def _planted_sc(
    n: int, backbone_adj: Array, backbone_w: Array, rng: np.random.Generator
) -> Array:
    """One subject's matrix: backbone with a rewired fraction of edges,
    jittered edge weights, and a fresh weak background."""
    iu = np.triu_indices(n, 1)
    edge_idx = np.flatnonzero(backbone_adj[iu])
    non_idx = np.flatnonzero(~backbone_adj[iu])
    k = int(round(REWIRE_FRACTION * edge_idx.size))
    dropped = rng.choice(edge_idx, size=k, replace=False) if k else np.empty(0, int)
    added = rng.choice(non_idx, size=k, replace=False) if k else np.empty(0, int)
    vals = np.where(
        backbone_adj[iu],
        backbone_w[iu] + rng.uniform(-EDGE_JITTER, EDGE_JITTER, iu[0].size),
        rng.uniform(*BACKGROUND_RANGE, size=iu[0].size),
    )
    vals[dropped] = rng.uniform(*BACKGROUND_RANGE, size=k)
    vals[added] = rng.uniform(*EDGE_WEIGHT_RANGE, size=k)
    sc = np.zeros((n, n))
    sc[iu] = np.clip(vals, 0.0, 1.0)
    return sc + sc.T


def _simulate_series(sc: Array, s: int, rng: np.random.Generator) -> Array:
    """Stationary linear dynamics over the planted graph, then the standard
    functional-series cleanup: global-signal removal (the dynamics' leading
    mode is shared by all ROIs and would otherwise swamp pairwise structure)
    and per-ROI variance normalization."""
    a_hat = normalized_adjacency(sc, self_loop=DYNAMICS_SELF_LOOP)
    lam = float(np.abs(np.linalg.eigvalsh(a_hat)).max())
    m = (SPECTRAL_RADIUS / lam) * a_hat
    n = sc.shape[0]
    x = rng.standard_normal(n)
    out = np.empty((n, s))
    for tau in range(BURN_IN + s):
        x = m @ x + DYNAMICS_NOISE * rng.standard_normal(n)
        if tau >= BURN_IN:
            out[:, tau - BURN_IN] = x
    out -= out.mean(axis=0, keepdims=True)
    out /= np.maximum(out.std(axis=1, keepdims=True), 1e-12)
    return out


def group_difference_edges(n: int, seed: int) -> list[tuple[int, int]]:
    """The fixed edge set strengthened in MCI subjects, derived from seed.

    Edges are drawn among a small hub subset of ROIs so that the per-ROI
    strength-change ranking has a crisp planted answer.
    """
    n_edges = min(N_GROUP_DIFF_EDGES, n * (n - 1) // 2)
    hubs = max(3, math.ceil(n / 3))
    while hubs * (hubs - 1) // 2 < n_edges:
        hubs += 1
    rng = np.random.default_rng([seed, 1])
    hub_ids = np.sort(rng.choice(n, size=hubs, replace=False))
    pairs = [(int(hub_ids[a]), int(hub_ids[b])) for a in range(hubs) for b in range(a + 1, hubs)]
    idx = rng.choice(len(pairs), size=n_edges, replace=False)
    return sorted(pairs[i] for i in idx)


def synth_dataset(
    n_subjects: int,
    n: int,
    s: int,
    seed: int,
    grid: tuple[int, int, int] | None = None,
    with_volumes: bool = True,
) -> list[SubjectRecord]:
    """Generate a deterministic planted-mapping dataset.

    Subjects alternate NC/MCI. Each gets its own planted SC, the series
    simulated from it, and (optionally) a painted block-atlas volume whose
    parcellation recovers the series exactly.
    """
    if n < 4:
        raise ConfigError(f"n must be >= 4, got {n}")
    if s < 2 * n:
        raise ConfigError(f"s must be >= 2n ({2 * n}), got {s}")
    if n_subjects < 2:
        raise ConfigError(f"n_subjects must be >= 2, got {n_subjects}")
    atlas = build_block_atlas(n, grid) if with_volumes else None
    diff_edges = group_difference_edges(n, seed)
    backbone_adj, backbone_w = _backbone(n, seed)
    width = max(3, len(str(n_subjects - 1)))
    records = []
    for k in range(n_subjects):
        rng = np.random.default_rng([seed, 0, k])
        group = GROUP_NC if k % 2 == 0 else GROUP_MCI
        sc = _planted_sc(n, backbone_adj, backbone_w, rng)
        if group == GROUP_MCI:
            for i, j in diff_edges:
                sc[i, j] = min(1.0, sc[i, j] + MCI_EDGE_BOOST)
                sc[j, i] = sc[i, j]
        series = _simulate_series(sc, s, rng)
        volume = paint_volume(series, atlas) if with_volumes else None
        records.append(
            SubjectRecord(
                id=f"sub{k:0{width}d}",
                group=group,
                timeseries=TimeSeriesPanel(series),
                volume=volume,
                empirical_sc=Connectome(sc),
            )
        )
    return records


# matrix CSV format ----------------------------------------------------------


def save_matrix(path, matrix) -> None:
    """CSV, one row per matrix row, 17 significant digits (exact round-trip)."""
    values = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    lines = [",".join(format(v, ".17g") for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path) -> Array:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError as exc:
            raise FormatError(f"{path}: bad number on line {lineno + 1}: {exc}")
    if not rows:
        raise FormatError(f"{path}: empty matrix file")
    width = len(rows[0])
    for lineno, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(
                f"{path}: ragged row on line {lineno + 1} "
                f"({len(row)} columns, expected {width})"
            )
    return np.asarray(rows, dtype=np.float64)


def load_connectome(path) -> Connectome:
    values = load_matrix(path)
    try:
        return Connectome(values)
    except DataError as exc:
        raise DataError(f"{path}: {exc}")


def load_timeseries(path) -> TimeSeriesPanel:
    return TimeSeriesPanel(load_matrix(path))


# binary volume format ---------------------------------------------------------

VOLUME_MAGIC = b"F2SV"
VOLUME_VERSION = 1


def save_volume(path, volume: LabeledVolume) -> None:
    """Bit-exact binary layout: magic, version u16, dims 4xu32, atlas i32,
    signal f64; all little-endian, row-major with time fastest."""
    x, y, z, s = volume.dims
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<H", VOLUME_VERSION))
        fh.write(struct.pack("<4I", x, y, z, s))
        fh.write(np.ascontiguousarray(volume.atlas, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(volume.signal, dtype="<f8").tobytes())


def load_volume(path) -> LabeledVolume:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != VOLUME_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0 (expected {VOLUME_MAGIC!r})")
    if len(data) < 6:
        raise FormatError(f"{path}: truncated before version field at byte 4")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VOLUME_VERSION:
        raise FormatError(f"{path}: unsupported format version {version} at byte 4")
    if len(data) < 22:
        raise FormatError(f"{path}: truncated in dims field at byte 6")
    x, y, z, s = struct.unpack_from("<4I", data, 6)
    atlas_bytes = x * y * z * 4
    signal_bytes = x * y * z * s * 8
    expected = 22 + atlas_bytes + signal_bytes
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes, got {len(data)} "
            f"(truncation at byte {min(len(data), expected)})"
        )
    atlas = np.frombuffer(data, dtype="<i4", count=x * y * z, offset=22)
    signal = np.frombuffer(data, dtype="<f8", count=x * y * z * s, offset=22 + atlas_bytes)
    return LabeledVolume(
        signal.reshape(x, y, z, s).copy(), atlas.reshape(x, y, z).copy()
    )


# dataset on disk --------------------------------------------------------------


def write_dataset(records: list[SubjectRecord], out_dir, meta: dict | None = None) -> Path:
    """Write per-subject files plus a JSON manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    subjects = []
    for rec in records:
        entry: dict = {"id": rec.id, "group": rec.group}
        if rec.empirical_sc is not None:
            sc_name = f"{rec.id}_sc.csv"
            save_matrix(out / sc_name, rec.empirical_sc)
            entry["sc"] = sc_name
        if rec.timeseries is not None:
            ts_name = f"{rec.id}_ts.csv"
            save_matrix(out / ts_name, rec.timeseries)
            entry["timeseries"] = ts_name
        if rec.volume is not None:
            vol_name = f"{rec.id}_vol.f2sv"
            save_volume(out / vol_name, rec.volume)
            entry["volume"] = vol_name
        subjects.append(entry)
    manifest = {"format": "f2s-dataset", "version": 1, "subjects": subjects}
    manifest.update(meta or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(manifest_path, load_volumes: bool = False) -> list[SubjectRecord]:
    """Load records from a manifest; volumes are skipped when a time series
    is available unless ``load_volumes`` is set."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot read manifest: {exc}")
    base = path.parent
    records = []
    for entry in manifest["subjects"]:
        ts = vol = sc = None
        if "timeseries" in entry:
            ts = load_timeseries(base / entry["timeseries"])
        if "volume" in entry and (load_volumes or ts is None):
            vol = load_volume(base / entry["volume"])
        if "sc" in entry:
            sc = load_connectome(base / entry["sc"])
        records.append(
            SubjectRecord(
                id=entry["id"], group=entry["group"],
                timeseries=ts, volume=vol, empirical_sc=sc,
            )
        )
    if not records:
        raise DataError(f"{path}: manifest lists no subjects")
    return records
