"""Station label binning, train/validation/test splitting, and the
dataset container persisted as a single BLDN file.

A dataset holds one record per blade (geometry, solved Cp, encoded
matrix) plus a manifest: the normalization range, the per-station label
specs computed over the whole library, and the split seed.  Station
labels are not stored; they are recomputed from the stored Cp records,
which keeps the file canonical and the manifest verifiable.

Binning follows a plain floor rule on 0.1-wide Cp intervals anchored at
the library minimum per station: values exactly on an interior bin edge
go to the higher bin, and the exact upper range edge clamps down into
the last bin.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoding import (
    MATRIX_RECORD_SIZE,
    ClampCounter,
    NormRange,
    encode,
    library_norm,
    matrix_from_bytes,
    matrix_to_bytes,
)
from .geometry import BladeProfile, profile_from_bytes, profile_record_size, profile_to_bytes
from .panel import (
    CpDistribution,
    cp_from_bytes,
    cp_record_bytes,
    cp_record_size,
    sample_cp_at,
)

MAGIC = b"BLDN"
VERSION = 1
DEFAULT_INTERVAL = 0.1

SIDES = ("pressure", "suction")
STATION_XS = tuple(round(0.1 * k, 1) for k in range(1, 10))
# 18 stations: every side at every tenth of chord from 0.1 to 0.9.
STATIONS = tuple((side, cx) for side in SIDES for cx in STATION_XS)

TRAIN, VALIDATION, TEST = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "validation": VALIDATION, "test": TEST}


class DatasetError(ValueError):
    """Invalid dataset contents or file format."""


def station_name(side: str, cx: float) -> str:
    return f"{side}_{cx:.2f}"


@dataclass(frozen=True)
class LabelSpec:
    """Cp binning for one station, derived from the whole library."""

    side: str
    cx: float
    cp_min: float
    interval: float
    n_labels: int

    def __post_init__(self):
        if self.side not in SIDES:
            raise DatasetError(f"unknown side: {self.side!r}")
        if self.interval <= 0.0:
            raise DatasetError(f"interval must be positive: {self.interval}")
        if self.n_labels < 1:
            raise DatasetError(f"n_labels must be >= 1: {self.n_labels}")
        if not (math.isfinite(self.cp_min) and math.isfinite(self.interval)):
            raise DatasetError("non-finite label spec")


def compute_label_spec(
    side: str, cx: float, cp_values: np.ndarray, interval: float = DEFAULT_INTERVAL
) -> LabelSpec:
    """Bin layout covering every observed value at the station.

    The bin count is ceil(range / interval) with a tiny backoff so a
    range that is an exact multiple of the interval (e.g. 3.2 / 0.1)
    does not gain a spurious 33rd bin from float rounding; the single
    value sitting exactly on the top edge clamps into the last bin.
    """
    cp_values = np.asarray(cp_values, dtype=np.float64)
    if cp_values.size == 0:
        raise DatasetError(f"no Cp values for station {station_name(side, cx)}")
    if not np.isfinite(cp_values).all():
        raise DatasetError(f"non-finite Cp at station {station_name(side, cx)}")
    cp_min = float(cp_values.min())
    width = float(cp_values.max()) - cp_min
    n = max(1, math.ceil(width / interval - 1e-9))
    return LabelSpec(side=side, cx=cx, cp_min=cp_min, interval=interval, n_labels=n)


def cp_to_label(cp: float, spec: LabelSpec, counter: ClampCounter | None = None) -> int:
    """Floor-rule bin index, clamped into [0, n_labels).

    The exact top range edge belongs to the last bin by definition and
    is not treated as out of range; only values strictly beyond the
    covered range bump the counter.
    """
    raw = math.floor((cp - spec.cp_min) / spec.interval)
    if counter is not None and (
        cp < spec.cp_min or cp > spec.cp_min + spec.n_labels * spec.interval
    ):
        counter.clamped += 1
    return min(max(raw, 0), spec.n_labels - 1)


def label_to_cp_center(label: int, spec: LabelSpec) -> float:
    if not 0 <= label < spec.n_labels:
        raise DatasetError(f"label {label} outside [0, {spec.n_labels})")
    return spec.cp_min + (label + 0.5) * spec.interval


def split_assignment(n: int, seed: int) -> np.ndarray:
    """Per-blade split codes: floor(2n/3) train (+ remainder), floor(n/6)
    validation, floor(n/6) test, shuffled deterministically by seed."""
    if n < 6:
        raise DatasetError(f"need at least 6 samples to split, got {n}")
    n_side = n // 6
    n_train = n - 2 * n_side
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=np.uint8)
    out[perm[:n_train]] = TRAIN
    out[perm[n_train : n_train + n_side]] = VALIDATION
    out[perm[n_train + n_side :]] = TEST
    return out


@dataclass
class DatasetBank:
    """In-memory dataset: blade records plus labeling/split metadata.

    Records are kept in blade-id order.  station_cp is the (18, n)
    matrix of sampled Cp values backing the label specs; labels are
    derived, never stored.
    """

    profiles: list[BladeProfile]
    cps: list[CpDistribution]
    matrices: np.ndarray              # (n, 20, 20) float64 at float32 precision
    norm: NormRange
    interval: float
    split_seed: int
    split: np.ndarray                 # (n,) uint8 codes
    label_specs: list[LabelSpec]
    station_cp: np.ndarray            # (18, n) float64
    clamped_cells: int = 0
    out_of_range_labels: int = 0
    skipped_ids: list[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.profiles)

    @property
    def points_per_side(self) -> int:
        return self.profiles[0].points_per_side

    def station_index(self, side: str, cx: float) -> int:
        for k, (s, x) in enumerate(STATIONS):
            if s == side and abs(x - cx) < 1e-9:
                return k
        raise DatasetError(f"unknown station: {station_name(side, cx)}")

    def labels_for(self, side: str, cx: float) -> np.ndarray:
        """Labels of every blade at one station, by the floor rule."""
        k = self.station_index(side, cx)
        spec = self.label_specs[k]
        raw = np.floor((self.station_cp[k] - spec.cp_min) / spec.interval).astype(int)
        return np.clip(raw, 0, spec.n_labels - 1)

    def split_ids(self, split: str) -> np.ndarray:
        """Positions (record indices) of the requested split."""
        if split not in SPLIT_NAMES:
            raise DatasetError(f"unknown split: {split!r}")
        return np.flatnonzero(self.split == SPLIT_NAMES[split])

    def blade_position(self, blade_id: int) -> int:
        for i, p in enumerate(self.profiles):
            if p.blade_id == blade_id:
                return i
        raise DatasetError(f"blade id {blade_id} not in dataset")


def build_bank(
    profiles: list[BladeProfile],
    cps: list[CpDistribution],
    split_seed: int,
    interval: float = DEFAULT_INTERVAL,
    skipped_ids: list[int] | None = None,
) -> DatasetBank:
    """Assemble a bank from solved blades: normalize, encode, bin, split."""
    if len(profiles) != len(cps):
        raise DatasetError("profile/Cp record count mismatch")
    norm = library_norm(profiles)
    counter = ClampCounter()
    # Quantize to the serialized float32 precision up front so a bank
    # built in memory is indistinguishable from one loaded from disk.
    matrices = np.stack(
        [encode(p, norm, counter) for p in profiles]
    ).astype(np.float32).astype(np.float64)

    station_cp = np.empty((len(STATIONS), len(profiles)))
    for k, (side, cx) in enumerate(STATIONS):
        station_cp[k] = [sample_cp_at(d, side, cx) for d in cps]
    specs = [
        compute_label_spec(side, cx, station_cp[k], interval)
        for k, (side, cx) in enumerate(STATIONS)
    ]
    return DatasetBank(
        profiles=profiles,
        cps=cps,
        matrices=matrices,
        norm=norm,
        interval=interval,
        split_seed=split_seed,
        split=split_assignment(len(profiles), split_seed),
        label_specs=specs,
        station_cp=station_cp,
        clamped_cells=counter.clamped,
        skipped_ids=list(skipped_ids or []),
    )


# --- persistence ---

def _manifest_dict(bank: DatasetBank) -> dict:
    return {
        "count": bank.count,
        "points_per_side": bank.points_per_side,
        "interval": bank.interval,
        "split_seed": bank.split_seed,
        "split_counts": {
            name: int(np.count_nonzero(bank.split == code))
            for name, code in SPLIT_NAMES.items()
        },
        "norm": {"y_min": bank.norm.y_min, "y_max": bank.norm.y_max},
        "stations": [
            {
                "side": s.side,
                "cx": s.cx,
                "cp_min": s.cp_min,
                "interval": s.interval,
                "n_labels": s.n_labels,
            }
            for s in bank.label_specs
        ],
        "clamped_cells": bank.clamped_cells,
        "skipped_ids": bank.skipped_ids,
    }


def _canonical_json(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_dataset(bank: DatasetBank, path: str) -> None:
    manifest = _canonical_json(_manifest_dict(bank))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for prof, cp, mat in zip(bank.profiles, bank.cps, bank.matrices):
            f.write(profile_to_bytes(prof))
            f.write(cp_record_bytes(cp))
            f.write(matrix_to_bytes(mat))


def load_dataset(path: str) -> DatasetBank:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise DatasetError(f"bad magic {blob[:4]!r}, not a dataset file")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise DatasetError(f"unsupported dataset version {version} (expected {VERSION})")
    (mlen,) = struct.unpack_from("<I", blob, 6)
    offset = 10
    manifest = json.loads(blob[offset : offset + mlen].decode("utf-8"))
    offset += mlen

    n = manifest["count"]
    pps = manifest["points_per_side"]
    record = profile_record_size(pps) + cp_record_size(pps) + MATRIX_RECORD_SIZE
    if len(blob) - offset != n * record:
        raise DatasetError(
            f"record region is {len(blob) - offset} bytes, expected {n * record}"
        )

    profiles: list[BladeProfile] = []
    cps: list[CpDistribution] = []
    matrices = np.empty((n, 20, 20))
    for i in range(n):
        prof = profile_from_bytes(blob[offset : offset + profile_record_size(pps)], pps)
        offset += profile_record_size(pps)
        cp = cp_from_bytes(
            blob[offset : offset + cp_record_size(pps)],
            pps,
            prof.pressure[:, 0],
            prof.suction[:, 0],
            blade_id=prof.blade_id,
        )
        offset += cp_record_size(pps)
        matrices[i] = matrix_from_bytes(blob[offset : offset + MATRIX_RECORD_SIZE])
        offset += MATRIX_RECORD_SIZE
        profiles.append(prof)
        cps.append(cp)

    station_cp = np.empty((len(STATIONS), n))
    for k, (side, cx) in enumerate(STATIONS):
        station_cp[k] = [sample_cp_at(d, side, cx) for d in cps]
    specs = [
        LabelSpec(
            side=s["side"],
            cx=s["cx"],
            cp_min=s["cp_min"],
            interval=s["interval"],
            n_labels=s["n_labels"],
        )
        for s in manifest["stations"]
    ]
    return DatasetBank(
        profiles=profiles,
        cps=cps,
        matrices=matrices,
        norm=NormRange(manifest["norm"]["y_min"], manifest["norm"]["y_max"]),
        interval=manifest["interval"],
        split_seed=manifest["split_seed"],
        split=split_assignment(n, manifest["split_seed"]),
        label_specs=specs,
        station_cp=station_cp,
        clamped_cells=manifest["clamped_cells"],
        skipped_ids=list(manifest["skipped_ids"]),
    )
