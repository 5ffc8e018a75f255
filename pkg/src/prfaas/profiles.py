"""Hardware/model performance profiles.

A profile is a small table of prefill measurements for one model on one
instance type (``parallelism`` GPUs).  Lookups between the table rows are
piecewise-linear in sequence length; the KV throughput of an instance is the
ratio of KVCache size to prefill latency at that length.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .exceptions import (
    EmptyProfileError,
    MissingProfileDataError,
    OutOfRangeError,
    ProfileError,
)

MIB_BITS = 2**20 * 8
GBIT = 1e9


def mib_to_gbit(mib):
    """Mebibytes to decimal gigabits (1 Gb = 1e9 bits)."""
    return mib * MIB_BITS / GBIT


def gbit_to_mib(gbit):
    return gbit * GBIT / MIB_BITS


@dataclass(frozen=True)
class ProfilePoint:
    seq_len: int
    kv_size_mib: float
    prefill_latency_s: float


@dataclass(frozen=True)
class HardwareModelProfile:
    """Prefill/decode performance of one model on one instance type.

    ``points`` holds measured (length, KV size, latency) rows.  Profiles
    published only as KV throughput values carry ``phi_points`` instead and
    support :func:`kv_throughput` but not the latency/size lookups.
    """

    name: str
    parallelism: int = 8
    points: tuple[ProfilePoint, ...] = ()
    decode_token_rate: float | None = None
    max_batch_size: int | None = None
    decode_step_s: float | None = None
    phi_points: tuple[tuple[int, float], ...] = ()
    hardware: str | None = None
    notes: str | None = None
    _lens: np.ndarray = field(init=False, repr=False, compare=False)
    _kv: np.ndarray = field(init=False, repr=False, compare=False)
    _lat: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.parallelism < 1:
            raise ProfileError(f"parallelism must be >= 1, got {self.parallelism}")
        if not self.points and not self.phi_points:
            raise EmptyProfileError(f"profile {self.name!r} has no points")
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "phi_points", tuple(tuple(p) for p in self.phi_points))
        for prev, cur in zip(pts, pts[1:]):
            if cur.seq_len <= prev.seq_len:
                raise ProfileError("profile seq_len must be strictly increasing")
            if cur.kv_size_mib <= prev.kv_size_mib or cur.prefill_latency_s <= prev.prefill_latency_s:
                raise ProfileError("kv_size and prefill_latency must increase with seq_len")
        for p in pts:
            if p.seq_len < 1 or p.kv_size_mib <= 0 or p.prefill_latency_s <= 0:
                raise ProfileError(f"invalid profile point {p}")
        phi_lens = [p[0] for p in self.phi_points]
        if any(b <= a for a, b in zip(phi_lens, phi_lens[1:])):
            raise ProfileError("phi_points seq_len must be strictly increasing")
        if self.decode_token_rate is not None and self.decode_token_rate <= 0:
            raise ProfileError("decode_token_rate must be positive")
        if self.max_batch_size is not None and self.decode_step_s is not None:
            implied = self.max_batch_size / self.decode_step_s
            if self.decode_token_rate is None:
                object.__setattr__(self, "decode_token_rate", implied)
            elif not math.isclose(implied, self.decode_token_rate, rel_tol=1e-9):
                raise ProfileError(
                    "decode_token_rate must equal max_batch_size / decode_step_s"
                )
        object.__setattr__(self, "_lens", np.array([p.seq_len for p in pts], dtype=float))
        object.__setattr__(self, "_kv", np.array([p.kv_size_mib for p in pts], dtype=float))
        object.__setattr__(self, "_lat", np.array([p.prefill_latency_s for p in pts], dtype=float))

    @property
    def has_tables(self) -> bool:
        return bool(self.points)

    @property
    def min_len(self) -> int:
        return self.points[0].seq_len if self.points else self.phi_points[0][0]

    @property
    def max_len(self) -> int:
        return self.points[-1].seq_len if self.points else self.phi_points[-1][0]

    @property
    def per_request_decode_rate(self) -> float:
        """Tokens/s seen by one decoding request when the batch is full."""
        if self.decode_token_rate is None:
            raise MissingProfileDataError(f"profile {self.name!r} has no decode rate")
        if self.max_batch_size is None:
            raise MissingProfileDataError(f"profile {self.name!r} has no max_batch_size")
        return self.decode_token_rate / self.max_batch_size

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "parallelism": self.parallelism}
        if self.hardware is not None:
            d["hardware"] = self.hardware
        d["decode_token_rate"] = self.decode_token_rate
        if self.max_batch_size is not None:
            d["max_batch_size"] = self.max_batch_size
        if self.decode_step_s is not None:
            d["decode_step_s"] = self.decode_step_s
        if self.points:
            d["points"] = [
                {"seq_len": p.seq_len, "kv_size_mib": p.kv_size_mib, "prefill_latency_s": p.prefill_latency_s}
                for p in self.points
            ]
        else:
            d["points"] = [{"seq_len": s, "kv_throughput_gbps": g} for s, g in self.phi_points]
        if self.notes:
            d["notes"] = self.notes
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HardwareModelProfile":
        raw = d.get("points") or []
        if not raw:
            raise EmptyProfileError(f"profile {d.get('name')!r} has no points")
        points, phi = [], []
        for r in raw:
            if "kv_size_mib" in r:
                points.append(ProfilePoint(int(r["seq_len"]), float(r["kv_size_mib"]), float(r["prefill_latency_s"])))
            else:
                phi.append((int(r["seq_len"]), float(r["kv_throughput_gbps"])))
        if points and phi:
            raise ProfileError("a profile mixes full rows with throughput-only rows")
        return cls(
            name=d["name"],
            parallelism=int(d.get("parallelism", 8)),
            points=tuple(points),
            decode_token_rate=d.get("decode_token_rate"),
            max_batch_size=d.get("max_batch_size"),
            decode_step_s=d.get("decode_step_s"),
            phi_points=tuple(phi),
            hardware=d.get("hardware"),
            notes=d.get("notes"),
        )


def _interp(xs: np.ndarray, ys: np.ndarray, l, extrapolate: bool, what: str):
    if xs.size == 0:
        raise MissingProfileDataError(f"profile has no {what} table")
    x = np.asarray(l, dtype=float)
    if not extrapolate and (np.any(x < xs[0]) or np.any(x > xs[-1])):
        raise OutOfRangeError(f"length {l} outside profiled range [{xs[0]:g}, {xs[-1]:g}]")
    y = np.interp(x, xs, ys)
    if extrapolate and xs.size >= 2:
        lo_slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
        hi_slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        y = np.where(x < xs[0], ys[0] + (x - xs[0]) * lo_slope, y)
        y = np.where(x > xs[-1], ys[-1] + (x - xs[-1]) * hi_slope, y)
    return float(y) if y.ndim == 0 else y


def interpolate_kv_size(profile: HardwareModelProfile, l, extrapolate: bool = False):
    """KVCache size in MiB at uncached length ``l`` (scalar or array)."""
    return _interp(profile._lens, profile._kv, l, extrapolate, "kv_size")


def interpolate_prefill_latency(profile: HardwareModelProfile, l, extrapolate: bool = False):
    """Prefill latency in seconds at length ``l`` (scalar or array)."""
    return _interp(profile._lens, profile._lat, l, extrapolate, "prefill latency")


def kv_throughput(profile: HardwareModelProfile, l, extrapolate: bool = False):
    """KV throughput of one instance in Gbps.

    Profiles with measured tables compute S_kv(l) / T_prefill(l); throughput-only
    profiles interpolate their published values directly.
    """
    if profile.has_tables:
        kv = interpolate_kv_size(profile, l, extrapolate)
        lat = interpolate_prefill_latency(profile, l, extrapolate)
        return mib_to_gbit(kv / lat)
    xs = np.array([p[0] for p in profile.phi_points], dtype=float)
    ys = np.array([p[1] for p in profile.phi_points], dtype=float)
    return _interp(xs, ys, l, extrapolate, "kv throughput")


def instances_from_gpus(n_gpus: int, parallelism: int) -> int:
    # partial instances cannot serve; round down
    if n_gpus < 0:
        raise ValueError("n_gpus must be non-negative")
    return int(n_gpus) // int(parallelism)


def cluster_egress_demand(profile: HardwareModelProfile, n_gpus: int, l_avg, extrapolate: bool = False) -> float:
    """Minimum egress (Gbps) for an ``n_gpus`` prefill cluster at mean length ``l_avg``."""
    n_inst = instances_from_gpus(n_gpus, profile.parallelism)
    if n_inst == 0:
        return 0.0
    return n_inst * kv_throughput(profile, l_avg, extrapolate)


def load_profile(source: str | Path | dict) -> HardwareModelProfile:
    """Load a profile from a dict, a JSON path, or a bundled fixture name."""
    if isinstance(source, dict):
        return HardwareModelProfile.from_dict(source)
    path = Path(source)
    if path.suffix == ".json" and path.exists():
        return HardwareModelProfile.from_dict(json.loads(path.read_text()))
    name = str(source).removeprefix("builtin:")
    try:
        text = resources.files("prfaas.data").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise ProfileError(f"unknown profile {source!r}") from None
    return HardwareModelProfile.from_dict(json.loads(text))


def builtin_profiles() -> list[str]:
    return sorted(
        p.name[: -len(".json")]
        for p in resources.files("prfaas.data").iterdir()
        if p.name.endswith(".json") and not p.name.startswith("case_study")
    )


def save_profile(profile: HardwareModelProfile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(profile.to_dict(), indent=2) + "\n")


def profile_from_rows(name: str, rows: Sequence[tuple[int, float, float]], **kw) -> HardwareModelProfile:
    return HardwareModelProfile(name=name, points=tuple(ProfilePoint(*r) for r in rows), **kw)
