"""Labeled and unlabeled eigenstate sets, and their on-disk format.

The labeled set holds states from deep inside both phases; the unlabeled set
spans the suspected transition. Every disorder realization has its own seed
derived from ``(master_seed, stream, h_index, eps_index, realization_index)``
so any subset of a set can be regenerated on its own.

File layout (little endian)::

    b"MBLS" | u16 version | u32 header_len | header (UTF-8 JSON manifest)
    | u32 crc32(header) | records

Each record is ``h, eps_target, eps_actual, energy`` as f8, ``seed`` as u8,
``domain`` as u1, ``phase`` as i1 (-1 when unlabeled), then ``dim``
coefficients as f4.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import comb
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    CapacityError,
    CorruptHeaderError,
    CountMismatchError,
    InvalidArgumentError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .spectrum import DEFAULT_MAX_DIM, diagonalize, select_indices
from .spin_chain import PERIODIC, build_hamiltonian, derive_seed, enumerate_basis, sample_disorder

MAGIC = b"MBLS"
VERSION = 1

LABELED = "labeled"
UNLABELED = "unlabeled"
DOMAIN_CODES = {LABELED: 0, UNLABELED: 1}
DELOCALIZED, MBL = 0, 1
PHASE_NAMES = {DELOCALIZED: "delocalized", MBL: "mbl"}

STREAM_DELOCALIZED, STREAM_MBL, STREAM_UNLABELED = 0, 1, 2

STATES_PER_REALIZATION = 50
RECORDS_PER_SET = 50_000


def arith_grid(start: float, stop: float, step: float, inclusive: bool = True) -> tuple:
    """Arithmetic grid with values rounded to 10 decimals to kill float drift."""
    n = int(np.floor((stop - start) / step + 1e-9))
    values = [round(start + i * step, 10) for i in range(n + 1)]
    if not inclusive and values and abs(values[-1] - stop) < 1e-9:
        values.pop()
    return tuple(values)


@dataclass(frozen=True)
class GridSpec:
    delocalized_h: tuple = arith_grid(0.10, 0.50, 0.05)
    mbl_h: tuple = arith_grid(7.0, 8.0, 0.1)
    unlabeled_h: tuple = arith_grid(0.5, 7.0, 0.2, inclusive=False)
    eps: tuple = arith_grid(0.05, 0.95, 0.05)
    k: int = STATES_PER_REALIZATION


DEFAULT_GRID = GridSpec()


@dataclass(frozen=True)
class EigenstateRecord:
    n_sites: int
    h: float
    eps_target: float
    eps_actual: float
    energy: float
    seed: int
    coefficients: np.ndarray
    domain_tag: str
    phase_label: int | None = None


def record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [
            ("h", "<f8"),
            ("eps_target", "<f8"),
            ("eps_actual", "<f8"),
            ("energy", "<f8"),
            ("seed", "<u8"),
            ("domain", "u1"),
            ("phase", "i1"),
            ("coefficients", "<f4", (dim,)),
        ]
    )


@dataclass
class RecordSet:
    """Columnar storage for many records of one system size."""

    n_sites: int
    h: np.ndarray
    eps_target: np.ndarray
    eps_actual: np.ndarray
    energy: np.ndarray
    seed: np.ndarray
    domain: np.ndarray
    phase: np.ndarray
    coefficients: np.ndarray

    @classmethod
    def empty(cls, n_sites: int) -> "RecordSet":
        dim = comb(n_sites, n_sites // 2)
        f8 = np.zeros(0)
        return cls(
            n_sites, f8, f8.copy(), f8.copy(), f8.copy(),
            np.zeros(0, np.uint64), np.zeros(0, np.uint8), np.zeros(0, np.int8),
            np.zeros((0, dim), np.float32),
        )

    @classmethod
    def from_records(cls, records: Sequence[EigenstateRecord], n_sites: int | None = None):
        if not records:
            if n_sites is None:
                raise InvalidArgumentError("n_sites is required for an empty record list")
            return cls.empty(n_sites)
        sizes = {r.n_sites for r in records}
        if len(sizes) != 1:
            raise InvalidArgumentError(f"records mix system sizes {sorted(sizes)}")
        return cls(
            sizes.pop(),
            np.array([r.h for r in records], float),
            np.array([r.eps_target for r in records], float),
            np.array([r.eps_actual for r in records], float),
            np.array([r.energy for r in records], float),
            np.array([r.seed for r in records], np.uint64),
            np.array([DOMAIN_CODES[r.domain_tag] for r in records], np.uint8),
            np.array([-1 if r.phase_label is None else r.phase_label for r in records], np.int8),
            np.stack([np.asarray(r.coefficients, np.float32) for r in records]),
        )

    @classmethod
    def concat(cls, sets: Sequence["RecordSet"]) -> "RecordSet":
        if len({s.n_sites for s in sets}) != 1:
            raise InvalidArgumentError("cannot concatenate record sets of different sizes")
        cols = {
            name: np.concatenate([getattr(s, name) for s in sets])
            for name in ("h", "eps_target", "eps_actual", "energy", "seed", "domain", "phase",
                         "coefficients")
        }
        return cls(sets[0].n_sites, **cols)

    @property
    def dim(self) -> int:
        return self.coefficients.shape[1]

    def __len__(self) -> int:
        return len(self.h)

    def __getitem__(self, i: int) -> EigenstateRecord:
        phase = int(self.phase[i])
        return EigenstateRecord(
            self.n_sites,
            float(self.h[i]),
            float(self.eps_target[i]),
            float(self.eps_actual[i]),
            float(self.energy[i]),
            int(self.seed[i]),
            self.coefficients[i],
            LABELED if self.domain[i] == 0 else UNLABELED,
            None if phase < 0 else phase,
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, index) -> "RecordSet":
        return RecordSet(
            self.n_sites,
            *(getattr(self, name)[index] for name in
              ("h", "eps_target", "eps_actual", "energy", "seed", "domain", "phase",
               "coefficients")),
        )

    def counts(self) -> dict:
        out = {}
        labeled = self.domain == 0
        for code, name in PHASE_NAMES.items():
            n = int(np.sum(labeled & (self.phase == code)))
            if n:
                out[name] = n
        n_unlabeled = int(np.sum(~labeled))
        if n_unlabeled:
            out[UNLABELED] = n_unlabeled
        return out

    def to_struct(self) -> np.ndarray:
        arr = np.zeros(len(self), dtype=record_dtype(self.dim))
        for name in arr.dtype.names:
            arr[name] = getattr(self, name)
        return arr

    @classmethod
    def from_struct(cls, n_sites: int, arr: np.ndarray) -> "RecordSet":
        return cls(n_sites, *(np.ascontiguousarray(arr[name]) for name in arr.dtype.names))

    def equals(self, other: "RecordSet") -> bool:
        """Bit-exact equality, including NaN payloads."""
        return self.n_sites == other.n_sites and self.to_struct().tobytes() == other.to_struct().tobytes()


@dataclass(frozen=True)
class GridGroup:
    name: str
    phase_label: int | None
    stream: int
    h_values: tuple
    realizations: tuple  # per h value


@dataclass(frozen=True)
class DatasetManifest:
    kind: str
    n_sites: int
    k: int
    master_seed: int
    eps_values: tuple
    groups: tuple
    counts: dict = field(default_factory=dict)
    boundary: str = PERIODIC
    header_bytes: int = 0
    record_bytes: int = 0

    @property
    def n_records(self) -> int:
        return sum(self.counts.values())

    @property
    def dim(self) -> int:
        return comb(self.n_sites, self.n_sites // 2)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_sites": self.n_sites,
            "k": self.k,
            "master_seed": self.master_seed,
            "boundary": self.boundary,
            "eps_values": list(self.eps_values),
            "groups": [
                {
                    "name": g.name,
                    "phase_label": g.phase_label,
                    "stream": g.stream,
                    "h_values": list(g.h_values),
                    "realizations": list(g.realizations),
                }
                for g in self.groups
            ],
            "counts": dict(sorted(self.counts.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            kind=d["kind"],
            n_sites=int(d["n_sites"]),
            k=int(d["k"]),
            master_seed=int(d["master_seed"]),
            boundary=d.get("boundary", PERIODIC),
            eps_values=tuple(d["eps_values"]),
            groups=tuple(
                GridGroup(g["name"], g["phase_label"], g["stream"], tuple(g["h_values"]),
                          tuple(g["realizations"]))
                for g in d["groups"]
            ),
            counts={k: int(v) for k, v in d["counts"].items()},
        )

    def expected_counts(self) -> dict:
        out = {}
        for g in self.groups:
            out[g.name] = out.get(g.name, 0) + sum(g.realizations) * len(self.eps_values) * self.k
        return {k: v for k, v in out.items() if v}


def sign_fix(coefficients) -> np.ndarray:
    """Flip the global sign so the largest-magnitude entry is positive.

    Ties in magnitude go to the lowest index.
    """
    v = np.asarray(coefficients)
    if v.size == 0 or not np.any(v):
        raise InvalidArgumentError("cannot sign-fix a zero vector")
    return -v if v[np.argmax(np.abs(v))] < 0 else v.copy()


def allocate_realizations(total: int, n_points: int) -> tuple:
    """Spread ``total`` realizations over ``n_points`` h values as evenly as possible."""
    base, extra = divmod(total, n_points)
    bumped = {(2 * i + 1) * n_points // (2 * extra) for i in range(extra)}
    return tuple(base + (j in bumped) for j in range(n_points))


@lru_cache(maxsize=8)
def _basis(n_sites: int):
    return enumerate_basis(n_sites)


def solve_realization(n_sites: int, h: float, seed: int, boundary: str = PERIODIC,
                      max_dim: int = DEFAULT_MAX_DIM):
    basis = _basis(n_sites)
    ham = build_hamiltonian(basis, sample_disorder(h, n_sites, seed), boundary)
    return diagonalize(ham, max_dim=max_dim)


def _generate_point(task):
    n_sites, boundary, h, eps, k, seed = task
    try:
        spec = solve_realization(n_sites, h, seed, boundary)
    except CapacityError as exc:
        raise CapacityError(f"{exc} at N={n_sites}, h={h}, eps={eps}") from exc
    idx = select_indices(spec, eps, k)
    eps_all = spec.normalized()
    coeffs = np.stack([sign_fix(spec.eigenvectors[:, i]) for i in idx]).astype(np.float32)
    return spec.eigenvalues[idx], eps_all[idx], coeffs


def _tasks(manifest: DatasetManifest):
    for g in manifest.groups:
        for hi, (h, reps) in enumerate(zip(g.h_values, g.realizations)):
            for ei, eps in enumerate(manifest.eps_values):
                for r in range(reps):
                    seed = derive_seed(manifest.master_seed, g.stream, hi, ei, r)
                    yield g, (manifest.n_sites, manifest.boundary, h, eps, manifest.k, seed)


def materialize(manifest: DatasetManifest, mapper: Callable = map) -> RecordSet:
    """Generate the records a manifest describes.

    ``mapper`` must preserve input order (builtin ``map`` or ``Executor.map``).
    """
    tasks = list(_tasks(manifest))
    if not tasks:
        return RecordSet.empty(manifest.n_sites)
    results = mapper(_generate_point, [t for _, t in tasks])
    cols = {name: [] for name in ("h", "eps_target", "eps_actual", "energy", "seed", "domain",
                                  "phase", "coefficients")}
    domain = DOMAIN_CODES[manifest.kind]
    for (group, (_, _, h, eps, k, seed)), (energies, eps_actual, coeffs) in zip(tasks, results):
        cols["h"].append(np.full(k, h))
        cols["eps_target"].append(np.full(k, eps))
        cols["eps_actual"].append(eps_actual)
        cols["energy"].append(energies)
        cols["seed"].append(np.full(k, seed, np.uint64))
        cols["domain"].append(np.full(k, domain, np.uint8))
        label = -1 if group.phase_label is None else group.phase_label
        cols["phase"].append(np.full(k, label, np.int8))
        cols["coefficients"].append(coeffs)
    return RecordSet(manifest.n_sites, **{k: np.concatenate(v) for k, v in cols.items()})


def _check_scale(scale: float):
    if not 0 < scale <= 1:
        raise InvalidArgumentError(f"scale must lie in (0, 1], got {scale}")


def labeled_manifest(scale: float, master_seed: int, n_sites: int = 12,
                     grid: GridSpec = DEFAULT_GRID, realizations: int | None = None,
                     boundary: str = PERIODIC) -> DatasetManifest:
    """Grid layout of the labeled set, without generating any states.

    Both classes receive the same total number of realizations, spread evenly
    over their own h grids, so the class sizes are exactly equal. With
    ``realizations`` given, every grid point gets at least that many.
    """
    _check_scale(scale)
    n_eps = len(grid.eps)
    n_h = max(len(grid.delocalized_h), len(grid.mbl_h))
    if realizations is not None:
        if realizations < 1:
            raise InvalidArgumentError("realizations must be >= 1")
        total = realizations * n_h
    else:
        total = max(1, round(RECORDS_PER_SET * scale / (n_eps * grid.k)))
    groups = (
        GridGroup("delocalized", DELOCALIZED, STREAM_DELOCALIZED, tuple(grid.delocalized_h),
                  allocate_realizations(total, len(grid.delocalized_h))),
        GridGroup("mbl", MBL, STREAM_MBL, tuple(grid.mbl_h),
                  allocate_realizations(total, len(grid.mbl_h))),
    )
    m = DatasetManifest(LABELED, n_sites, grid.k, int(master_seed), tuple(grid.eps), groups,
                        boundary=boundary)
    return replace(m, counts=m.expected_counts())


def unlabeled_manifest(scale: float, master_seed: int, n_sites: int = 12,
                       grid: GridSpec = DEFAULT_GRID, realizations: int | None = None,
                       boundary: str = PERIODIC) -> DatasetManifest:
    _check_scale(scale)
    n_h = len(grid.unlabeled_h)
    if realizations is None:
        realizations = max(1, round(RECORDS_PER_SET * scale / (n_h * len(grid.eps) * grid.k)))
    groups = (
        GridGroup(UNLABELED, None, STREAM_UNLABELED, tuple(grid.unlabeled_h),
                  (int(realizations),) * n_h),
    )
    m = DatasetManifest(UNLABELED, n_sites, grid.k, int(master_seed), tuple(grid.eps), groups,
                        boundary=boundary)
    return replace(m, counts=m.expected_counts())


def build_labeled_set(scale: float, master_seed: int, n_sites: int = 12,
                      grid: GridSpec = DEFAULT_GRID, realizations: int | None = None,
                      boundary: str = PERIODIC, mapper: Callable = map):
    manifest = labeled_manifest(scale, master_seed, n_sites, grid, realizations, boundary)
    return materialize(manifest, mapper), manifest


def build_unlabeled_set(scale: float, master_seed: int, n_sites: int = 12,
                        grid: GridSpec = DEFAULT_GRID, realizations: int | None = None,
                        boundary: str = PERIODIC, mapper: Callable = map):
    manifest = unlabeled_manifest(scale, master_seed, n_sites, grid, realizations, boundary)
    return materialize(manifest, mapper), manifest


# --- persistence -------------------------------------------------------------

_PREFIX = struct.Struct("<4sHI")
_CRC = struct.Struct("<I")


def save_records(path, records: RecordSet | Iterable[EigenstateRecord],
                 manifest: DatasetManifest | None = None, sidecar: bool = True) -> DatasetManifest:
    """Write records plus a text manifest next to them; returns the stored manifest."""
    path = Path(path)
    if not isinstance(records, RecordSet):
        records = RecordSet.from_records(
            list(records), manifest.n_sites if manifest is not None else None
        )
    if manifest is None:
        kind = UNLABELED if np.any(records.domain == 1) else LABELED
        manifest = DatasetManifest(kind, records.n_sites, 0, 0, (), ())
    manifest = replace(manifest, counts=records.counts())
    header = json.dumps(manifest.to_dict(), sort_keys=True).encode()
    payload = records.to_struct()
    manifest = replace(
        manifest,
        header_bytes=_PREFIX.size + len(header) + _CRC.size,
        record_bytes=payload.dtype.itemsize,
    )
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        fh.write(_CRC.pack(zlib.crc32(header)))
        fh.write(payload.tobytes())
    if sidecar:
        write_manifest_text(manifest_path(path), manifest)
    return manifest


def load_records(path) -> tuple[RecordSet, DatasetManifest]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CorruptHeaderError(f"{path}: file too short for a header")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {VERSION}")
    start = _PREFIX.size
    end = start + header_len
    if len(data) < end + _CRC.size:
        raise CorruptHeaderError(f"{path}: header is cut short")
    header = data[start:end]
    (crc,) = _CRC.unpack_from(data, end)
    if crc != zlib.crc32(header):
        raise CorruptHeaderError(f"{path}: header checksum mismatch")
    try:
        manifest = DatasetManifest.from_dict(json.loads(header))
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptHeaderError(f"{path}: unreadable header ({exc})") from exc

    offset = end + _CRC.size
    dtype = record_dtype(manifest.dim)
    expected = manifest.n_records * dtype.itemsize
    available = len(data) - offset
    if available < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {available} bytes, header promises {expected}"
        )
    if available > expected:
        raise CountMismatchError(
            f"{path}: {available - expected} trailing bytes beyond {manifest.n_records} records"
        )
    arr = np.frombuffer(data, dtype=dtype, count=manifest.n_records, offset=offset)
    records = RecordSet.from_struct(manifest.n_sites, arr)
    if records.counts() != manifest.counts:
        raise CountMismatchError(
            f"{path}: records count {records.counts()} but header says {manifest.counts}"
        )
    return records, replace(manifest, header_bytes=offset, record_bytes=dtype.itemsize)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def write_manifest_text(path, manifest: DatasetManifest):
    d = manifest.to_dict()
    lines = [
        "# eigenstate dataset manifest",
        f"kind = {d['kind']}",
        f"n_sites = {d['n_sites']}",
        f"dim = {manifest.dim}",
        f"k = {d['k']}",
        f"master_seed = {d['master_seed']}",
        f"boundary = {d['boundary']}",
        f"eps_values = {', '.join(repr(e) for e in d['eps_values'])}",
    ]
    for g in d["groups"]:
        lines.append(f"# group {g['name']}")
        lines.append(f"{g['name']}.h_values = {', '.join(repr(h) for h in g['h_values'])}")
        lines.append(f"{g['name']}.realizations = {', '.join(str(r) for r in g['realizations'])}")
    for name, n in d["counts"].items():
        lines.append(f"count.{name} = {n}")
    lines.append(f"header_bytes = {manifest.header_bytes}")
    lines.append(f"record_bytes = {manifest.record_bytes}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest_text(path) -> dict:
    """Parse a sidecar manifest into a flat ``{key: value-string}`` dict."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
