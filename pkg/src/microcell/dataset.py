"""Shape-parameter sampling and the (shape, property) database.

Candidates are drawn as uniform simplex weights plus Latin-hypercube
level-set offsets, filtered through the geometric validity check, and
homogenized. Records persist as a flat CSV with full round-trip decimal
precision; hull and normalization constants ride alongside as JSON.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import MicrocellError, ValidationError
from .geometry import validity_check, voxelize
from .homogenization import BASE_E, BASE_NU, homogenize_grid
from .hull import PropertyHull
from .params import T_MAX, T_MIN, ShapeParams

log = logging.getLogger(__name__)

CSV_HEADER = ["id", "alpha1", "alpha2", "alpha3", "t1", "t2", "t3", "E_H", "nu_H", "vf"]

OVERSAMPLE = 2  # candidates drawn per requested record before filtering
MIN_YIELD = 0.10


@dataclass(frozen=True)
class DatasetRecord:
    id: int
    params: ShapeParams
    E_H: float
    nu_H: float
    vf: float

    def __post_init__(self):
        if not (self.E_H > 0 and -1.0 < self.nu_H < 0.5):
            raise ValidationError(
                f"record {self.id}: properties ({self.E_H}, {self.nu_H}) out of range")
        if not (0.0 < self.vf < 1.0):
            raise ValidationError(f"record {self.id}: volume fraction {self.vf} out of (0, 1)")


def sample_alphas(n: int, seed: int) -> np.ndarray:
    """Uniform samples on the 2-simplex via normalized exponential spacings."""
    if n < 1:
        raise ValidationError("need n >= 1 samples")
    rng = np.random.default_rng(seed)
    e = rng.exponential(size=(n, 3))
    return e / e.sum(axis=1, keepdims=True)


def latin_hypercube_t(n: int, lo: float = T_MIN, hi: float = T_MAX,
                      seed: int = 0) -> np.ndarray:
    """Latin hypercube over [lo, hi]^3: one sample per stratum per axis."""
    if n < 1:
        raise ValidationError("need n >= 1 samples")
    if not lo < hi:
        raise ValidationError(f"need lo < hi, got ({lo}, {hi})")
    rng = np.random.default_rng(seed)
    out = np.empty((n, 3))
    for dim in range(3):
        strata = rng.permutation(n)
        out[:, dim] = (strata + rng.random(n)) / n
    return lo + (hi - lo) * out


def sample_candidates(n: int, seed: int) -> list[ShapeParams]:
    alphas = sample_alphas(n, seed)
    ts = latin_hypercube_t(n, seed=seed + 1)
    return [ShapeParams(*a, *t) for a, t in zip(alphas, ts)]


def _evaluate_candidate(args):
    index, raw, resolution = args
    params = ShapeParams.from_array(raw)
    grid = voxelize(params, resolution)
    valid = validity_check(grid)
    if not valid:
        return index, None, valid.reason
    try:
        props = homogenize_grid(grid, check_validity=False)
    except MicrocellError as exc:
        return index, None, str(exc)
    return index, (params, props.E_H, props.nu_H, grid.volume_fraction), None


def generate_dataset(n_target: int, seed: int, resolution: int = 40,
                     threads: int = 1) -> list[DatasetRecord]:
    """Sample, filter, and homogenize until n_target valid records exist.

    The candidate list is fixed upfront (2x oversampled) and evaluated
    in waves only as far as needed; valid records keep candidate order,
    so the output is identical for any thread count.
    """
    if n_target < 1:
        raise ValidationError("need n_target >= 1")
    n_candidates = OVERSAMPLE * n_target
    candidates = sample_candidates(n_candidates, seed)
    jobs = [(i, p.to_array(), resolution) for i, p in enumerate(candidates)]

    payloads = []
    pos = 0
    n_valid = 0
    while n_valid < n_target and pos < n_candidates:
        batch = min(max(int(1.15 * (n_target - n_valid)) + 1, 8), n_candidates - pos)
        wave = jobs[pos:pos + batch]
        if threads <= 1:
            outcomes = map(_evaluate_candidate, wave)
        else:
            pool = ProcessPoolExecutor(max_workers=threads)
            outcomes = pool.map(_evaluate_candidate, wave, chunksize=2)
        for idx, payload, reason in outcomes:
            payloads.append(payload)
            if payload is not None:
                n_valid += 1
            else:
                log.info("candidate %d rejected: %s", idx, reason)
        if threads > 1:
            pool.shutdown()
        pos += batch

    records = []
    for payload in payloads:
        if payload is None:
            continue
        params, E_H, nu_H, vf = payload
        records.append(DatasetRecord(len(records), params, E_H, nu_H, vf))
        if len(records) >= n_target:
            break
    if len(records) < max(1, int(MIN_YIELD * pos)):
        raise MicrocellError(
            f"only {len(records)}/{pos} evaluated candidates were valid; aborting")
    if len(records) < n_target:
        log.warning("shortfall: %d/%d valid records", len(records), n_target)
    return records


def split(records, ratio: float = 0.8, seed: int = 0):
    """Seeded shuffle into disjoint (train, test) with nearest-int sizes."""
    if not records:
        raise ValidationError("cannot split an empty record list")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_train = int(np.floor(ratio * len(records) + 0.5))
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return [records[i] for i in train_idx], [records[i] for i in test_idx]


def convex_hull(points) -> PropertyHull:
    """Hull of (E, nu) points as inward-feasible hyperplane rows."""
    return PropertyHull.from_points(points)


def property_array(records) -> np.ndarray:
    return np.array([[r.E_H, r.nu_H] for r in records])


def params_matrix(records) -> np.ndarray:
    return np.array([r.params.to_array() for r in records])


def write_csv(records, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            row = [r.id] + [repr(v) for v in r.params.to_array().tolist()]
            row += [repr(r.E_H), repr(r.nu_H), repr(r.vf)]
            writer.writerow(row)
    os.replace(tmp, path)


def read_csv(path) -> list[DatasetRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValidationError(f"unexpected dataset header {reader.fieldnames}")
        for row in reader:
            params = ShapeParams(*(float(row[k]) for k in CSV_HEADER[1:7]))
            records.append(DatasetRecord(int(row["id"]), params, float(row["E_H"]),
                                         float(row["nu_H"]), float(row["vf"])))
    return records


def write_scaling(path, records, train_records, seed: int, resolution: int) -> None:
    """Normalization constants from the train split plus provenance."""
    props = property_array(train_records)
    payload = {
        "E_min": float(props[:, 0].min()),
        "E_max": float(props[:, 0].max()),
        "nu_min": float(props[:, 1].min()),
        "nu_max": float(props[:, 1].max()),
        "base_material": {"E": BASE_E, "nu": BASE_NU},
        "seed": seed,
        "resolution": resolution,
        "n_records": len(records),
        "n_train": len(train_records),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def read_scaling(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
