"""Synthetic compressive-sensing instances.

Signals are Bernoulli-Gaussian, sensing matrices have i.i.d. N(0, 1/M)
entries and the noise variance is set per realization so that
``||Hx||^2 / (M * noise_var)`` equals the target SNR.

Seeding: instance ``i`` of stream ``domain`` under master seed ``s`` draws
from ``SeedSequence(s, spawn_key=(domain, i))``. Distinct ``(domain, i)``
pairs give independent streams, so instances can be generated in any order
or in parallel. With a fixed sensing matrix it is drawn once from
``spawn_key=(domain, FIXED_H_KEY)``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = [
    "SignalPrior",
    "Instance",
    "Dataset",
    "TRAIN",
    "TEST",
    "instance_rng",
    "sample_signal",
    "sample_matrix",
    "make_instance",
    "make_dataset",
    "write_dataset",
    "read_dataset",
]

TRAIN = 0
TEST = 1
FIXED_H_KEY = 2**32 - 1
MAX_REDRAWS = 100

MAGIC = b"SLRN"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")


@dataclass(frozen=True)
class SignalPrior:
    n: int
    sparsity_rho: float = 0.2
    active_mean: float = 0.0
    active_var: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"signal length must be >= 1, got {self.n}")
        if not 0.0 < self.sparsity_rho <= 1.0:
            raise ValidationError(f"sparsity ratio must lie in (0, 1], got {self.sparsity_rho}")
        if not self.active_var > 0:
            raise ValidationError("active variance must be positive")


@dataclass(frozen=True, eq=False)
class Instance:
    x_true: np.ndarray
    H: np.ndarray
    y: np.ndarray
    noise_var: float
    seed: tuple = ()

    @property
    def support(self):
        return np.flatnonzero(self.x_true)

    def digest(self):
        """Content hash, used to check that splits do not overlap."""
        h = hashlib.sha256()
        for a in (self.x_true, self.H, self.y):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class Dataset:
    instances: list
    master_seed: int

    @property
    def n(self):
        return self.instances[0].H.shape[1]

    @property
    def m(self):
        return self.instances[0].H.shape[0]

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]


def instance_rng(master_seed, domain, index):
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(domain), int(index)))
    return np.random.default_rng(ss)


def sample_signal(prior, rng):
    active = rng.random(prior.n) < prior.sparsity_rho
    values = prior.active_mean + np.sqrt(prior.active_var) * rng.standard_normal(prior.n)
    return np.where(active, values, 0.0)


def sample_matrix(m, n, rng):
    if m < 1 or n < 1:
        raise ValidationError(f"matrix dimensions must be positive, got {m}x{n}")
    return rng.standard_normal((m, n)) / np.sqrt(m)


def make_instance(prior, m, snr_db, rng, H=None):
    """Draw ``x`` and (unless given) ``H``, then noisy measurements at ``snr_db``."""
    if not np.isfinite(snr_db):
        raise ValidationError(f"snr_db must be finite, got {snr_db}")
    if H is None:
        H = sample_matrix(m, prior.n, rng)
    for _ in range(MAX_REDRAWS):
        x = sample_signal(prior, rng)
        Hx = H @ x
        power = float(Hx @ Hx)
        if power > 0:
            break
    else:
        raise ValidationError(f"signal draw was degenerate {MAX_REDRAWS} times in a row")
    noise_var = power / (m * 10.0 ** (snr_db / 10.0))
    y = Hx + np.sqrt(noise_var) * rng.standard_normal(m)
    return Instance(x, H, y, noise_var)


def make_dataset(prior, m, snr_db, count, master_seed, domain=TRAIN, fixed_h=False, start=0):
    """``count`` instances with indices ``start .. start+count-1`` of a stream."""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    H = None
    if fixed_h:
        H = sample_matrix(m, prior.n, instance_rng(master_seed, domain, FIXED_H_KEY))
    out = []
    for i in range(start, start + count):
        inst = make_instance(prior, m, snr_db, instance_rng(master_seed, domain, i), H)
        out.append(Instance(inst.x_true, inst.H, inst.y, inst.noise_var, (master_seed, domain, i)))
    return Dataset(out, int(master_seed))


def write_dataset(ds, path):
    """Write ``ds`` in the SLRN v1 layout.

    Header: magic ``b"SLRN"``, u32 version, u32 N, u32 M, u32 count,
    u64 master seed. Then per instance: x (N doubles), H (M*N doubles,
    row-major), y (M doubles), noise variance (one double). All
    little-endian.
    """
    n, m = ds.n, ds.m
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, m, len(ds), int(ds.master_seed)))
        for inst in ds:
            fh.write(np.ascontiguousarray(inst.x_true, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(inst.H, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(inst.y, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", inst.noise_var))


def read_dataset(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, version, n, m, count, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ValidationError(f"{path}: not a SLRN v{VERSION} dataset")
    rec = n + m * n + m + 1
    expected = _HEADER.size + 8 * rec * count
    if len(raw) != expected:
        raise ValidationError(f"{path}: size {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(count, rec)
    out = []
    for i, row in enumerate(data):
        x = row[:n].copy()
        H = row[n : n + m * n].reshape(m, n).copy()
        y = row[n + m * n : n + m * n + m].copy()
        out.append(Instance(x, H, y, float(row[-1]), (seed, None, i)))
    return Dataset(out, seed)
