"""Persisted fitted models: the .jma container and the archive store.

Layout of a .jma file::

    bytes 0-3    magic b"JMA1"
    bytes 4-7    little-endian uint32 header length
    header       UTF-8 JSON: format version, model spec, parameter names,
                 dimensions, diagnostics, config, training ids
    blob         float64 C-order: parameter draws (M x d) followed by
                 random-effect draws (M x n_train x q)

Wall-clock time is deliberately absent from the file so a fit with a
fixed seed is byte-identical across runs; manifests report the file
mtime as the creation time instead.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_io import spec_from_dict, spec_to_dict
from .errors import DataError
from .inference import ChainConfig, PosteriorArchive, PriorSpec

MAGIC = b"JMA1"
FORMAT_VERSION = 1


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def spec_hash(spec) -> str:
    canonical = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def save_archive(archive: PosteriorArchive, path) -> None:
    path = Path(path)
    M, d = archive.draws.shape
    _, n_train, q = archive.u_draws.shape
    diagnostics = {
        "rhat": {k: _finite_or_none(v) for k, v in archive.diagnostics.get("rhat", {}).items()},
        "max_rhat_parameters": _finite_or_none(archive.diagnostics.get("max_rhat_parameters", math.nan)),
        "max_rhat_effects": _finite_or_none(archive.diagnostics.get("max_rhat_effects", math.nan)),
        "max_rhat": _finite_or_none(archive.diagnostics.get("max_rhat", math.nan)),
        "acceptance": {k: float(v) for k, v in archive.diagnostics.get("acceptance", {}).items()},
        "n_chains": archive.diagnostics.get("n_chains"),
        "kept_per_chain": archive.diagnostics.get("kept_per_chain"),
    }
    header = {
        "format": FORMAT_VERSION,
        "model_spec": spec_to_dict(archive.spec),
        "spec_hash": spec_hash(archive.spec),
        "param_names": list(archive.layout.names),
        "m": M,
        "n_train": n_train,
        "q": q,
        "training_ids": list(archive.training_ids),
        "diagnostics": diagnostics,
        "config": {
            "n_chains": archive.config.n_chains,
            "n_iter": archive.config.n_iter,
            "n_burnin": archive.config.n_burnin,
            "seed": archive.config.seed,
            "thinning": archive.config.thinning,
            "adapt_window": archive.config.adapt_window,
            "init_jitter": archive.config.init_jitter,
            "fixed_params": dict(archive.config.fixed_params),
        },
        "priors": {
            "normal_variance": archive.priors.normal_variance,
            "b_upper": archive.priors.b_upper,
            "threshold_variance": archive.priors.threshold_variance,
            "ig_shape": archive.priors.ig_shape,
            "ig_rate": archive.priors.ig_rate,
        },
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = archive.draws.astype("<f8").tobytes() + archive.u_draws.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)


def load_archive(path) -> PosteriorArchive:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"'{path}' is not a jointrait archive (bad magic)")
    (header_len,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + header_len].decode())
    if header.get("format") != FORMAT_VERSION:
        raise DataError(f"'{path}': unsupported archive format {header.get('format')}")
    spec = spec_from_dict(header["model_spec"])
    if spec_hash(spec) != header["spec_hash"]:
        raise DataError(f"'{path}': stored spec hash does not match its contents")
    M, n_train, q = header["m"], header["n_train"], header["q"]
    d = len(header["param_names"])
    expected = 8 * (M * d + M * n_train * q)
    blob = raw[8 + header_len :]
    if len(blob) != expected:
        raise DataError(f"'{path}': draw blob has {len(blob)} bytes, expected {expected}")
    draws = np.frombuffer(blob[: 8 * M * d], dtype="<f8").reshape(M, d).copy()
    u_draws = np.frombuffer(blob[8 * M * d :], dtype="<f8").reshape(M, n_train, q).copy()
    config = ChainConfig(**header["config"])
    priors = PriorSpec(**header["priors"])
    diagnostics = header["diagnostics"]
    archive = PosteriorArchive(
        spec=spec,
        draws=draws,
        u_draws=u_draws,
        training_ids=list(header["training_ids"]),
        diagnostics=diagnostics,
        config=config,
        priors=priors,
    )
    if list(archive.layout.names) != list(header["param_names"]):
        raise DataError(f"'{path}': parameter layout does not match the stored spec")
    return archive


@dataclass(frozen=True)
class ArchiveManifest:
    id: str
    spec_hash: str
    created: str  # ISO timestamp from the file mtime
    n_draws: int
    max_rhat: float | None
    min_acceptance: float | None
    max_acceptance: float | None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "spec_hash": self.spec_hash,
            "created": self.created,
            "n_draws": self.n_draws,
            "max_rhat": self.max_rhat,
            "min_acceptance": self.min_acceptance,
            "max_acceptance": self.max_acceptance,
        }


class ArchiveStore:
    """Read-only directory of .jma files; archives load lazily and cache."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise DataError(f"archive store '{directory}' is not a directory")
        self._cache: dict[str, PosteriorArchive] = {}

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.jma"))

    def path(self, archive_id: str) -> Path:
        return self.directory / f"{archive_id}.jma"

    def manifest(self, archive_id: str) -> ArchiveManifest:
        import datetime

        path = self.path(archive_id)
        if not path.exists():
            raise KeyError(archive_id)
        try:
            raw = path.read_bytes()
            if raw[:4] != MAGIC:
                raise DataError(f"'{path}' is not a jointrait archive (bad magic)")
            (header_len,) = struct.unpack("<I", raw[4:8])
            header = json.loads(raw[8 : 8 + header_len].decode())
            acceptance = header["diagnostics"].get("acceptance", {})
            spec_digest = header["spec_hash"]
            n_draws = header["m"]
            max_rhat = header["diagnostics"].get("max_rhat")
        except DataError:
            raise
        except Exception as err:
            raise DataError(f"'{path}': malformed archive header ({err})") from None
        mtime = datetime.datetime.fromtimestamp(os.path.getmtime(path), datetime.timezone.utc)
        return ArchiveManifest(
            id=archive_id,
            spec_hash=spec_digest,
            created=mtime.isoformat(),
            n_draws=n_draws,
            max_rhat=max_rhat,
            min_acceptance=min(acceptance.values()) if acceptance else None,
            max_acceptance=max(acceptance.values()) if acceptance else None,
        )

    def load(self, archive_id: str) -> PosteriorArchive:
        if archive_id not in self._cache:
            path = self.path(archive_id)
            if not path.exists():
                raise KeyError(archive_id)
            try:
                self._cache[archive_id] = load_archive(path)
            except DataError:
                raise
            except Exception as err:
                raise DataError(f"'{path}': failed to load archive ({err})") from None
        return self._cache[archive_id]
