"""Voyage load profiles: synthetic generator and CSV reader/writer.

A profile is a sailing segment (``spa = 0``) followed by a port segment
(``spa = 1``) at a fixed step length.  The CSV schema is ``t_s,p_dem_kw,spa``
with a required header; optional ``# key: value`` comment lines before the
header carry the profile id and demand class so round trips are lossless.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ProfileConfig

CLASSES = ("low", "moderate", "high")
HEADER = ["t_s", "p_dem_kw", "spa"]


class ProfileError(ValueError):
    """Invalid profile content; ``line`` is the 1-based file line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class LoadProfile:
    id: str
    samples: tuple[tuple[float, int], ...]
    step_seconds: float = 60.0
    class_label: str = "moderate"
    plateau_kw: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple((float(p), int(s)) for p, s in self.samples))
        validate(self)

    @property
    def demand(self) -> np.ndarray:
        return np.array([p for p, _ in self.samples])

    @property
    def spa(self) -> np.ndarray:
        return np.array([s for _, s in self.samples], dtype=int)

    @property
    def sailing_steps(self) -> int:
        return int(np.count_nonzero(self.spa == 0))

    @property
    def port_demand(self) -> np.ndarray:
        return self.demand[self.sailing_steps:]

    @property
    def sailing_demand(self) -> np.ndarray:
        return self.demand[: self.sailing_steps]


def validate(profile: LoadProfile, ceiling_kw: float | None = None) -> None:
    if not profile.samples:
        raise ProfileError("empty profile")
    if profile.class_label not in CLASSES:
        raise ProfileError(f"unknown class label {profile.class_label!r}")
    if profile.step_seconds <= 0:
        raise ProfileError("step_seconds must be positive")
    prev = 0
    switched = False
    for i, (p, s) in enumerate(profile.samples):
        if not math.isfinite(p) or p < 0:
            raise ProfileError(f"sample {i}: negative or non-finite demand {p}")
        if s not in (0, 1):
            raise ProfileError(f"sample {i}: spa must be 0 or 1")
        if s != prev:
            if s == 0 or switched:
                raise ProfileError(f"sample {i}: spa may switch from 0 to 1 only once")
            switched = True
        prev = s
    if profile.samples[-1][1] != 1:
        raise ProfileError("profile must end in port mode (spa = 1)")
    if profile.samples[0][1] != 0:
        raise ProfileError("profile must start in sailing mode (spa = 0)")
    if ceiling_kw is not None and max(p for p, _ in profile.samples) > ceiling_kw:
        raise ProfileError(f"demand exceeds plant ceiling {ceiling_kw} kW")


@dataclass(frozen=True)
class ProfileSet:
    train: tuple[LoadProfile, ...]
    validation: tuple[LoadProfile, ...]
    seed: int

    def __post_init__(self):
        ids = {p.id for p in self.train}
        if ids & {p.id for p in self.validation}:
            raise ProfileError("train and validation sets overlap")


def _class_counts(n: int, mix: tuple[float, ...]) -> list[int]:
    raw = [n * w for w in mix]
    counts = [int(math.floor(r)) for r in raw]
    rest = sorted(range(len(mix)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in rest[: n - sum(counts)]:
        counts[i] += 1
    return counts


def base_curve(plateau: float, cfg: ProfileConfig) -> np.ndarray:
    """Departure ramp, cruise plateau, arrival ramp (cosine-shaped ramps)."""
    n = cfg.sailing_steps
    start = cfg.manoeuvre_start_fraction * plateau
    curve = np.full(n, plateau)
    dep = min(cfg.departure_steps, n)
    arr = min(cfg.arrival_steps, n - dep)
    for i in range(dep):
        u = (i + 0.5) / dep
        curve[i] = start + (plateau - start) * 0.5 * (1 - math.cos(math.pi * u))
    for i in range(arr):
        u = (i + 0.5) / arr
        curve[n - arr + i] = plateau - (plateau - start) * 0.5 * (1 - math.cos(math.pi * u))
    return curve


def fluctuation(rng: np.random.Generator, n: int, amplitude: float) -> np.ndarray:
    """Three random-phase sinusoids plus 5-sample smoothed noise, peak-scaled to ``amplitude``."""
    t = np.arange(n, dtype=np.float64)
    sig = np.zeros(n)
    for _ in range(3):
        period = rng.uniform(4.0, 20.0)
        sig += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    noise = np.convolve(rng.normal(0.0, 0.6, n + 4), np.ones(5) / 5, mode="valid")
    sig += noise
    peak = np.max(np.abs(sig))
    return sig * (amplitude / peak) if peak > 0 else sig


def make_profile(rng: np.random.Generator, pid: str, label: str, cfg: ProfileConfig) -> LoadProfile:
    lo, hi = cfg.plateau_fraction[label]
    plateau = rng.uniform(lo, hi) * cfg.plant_ceiling_kw
    amp = rng.uniform(0.5, 1.0) * cfg.fluctuation_fraction * plateau
    sail = base_curve(plateau, cfg) + fluctuation(rng, cfg.sailing_steps, amp)
    sail = np.clip(sail, 0.0, cfg.plant_ceiling_kw)
    p_lo, p_hi = cfg.port_demand_kw
    hotel = rng.uniform(p_lo, p_hi)
    port = np.clip(hotel + rng.normal(0.0, 0.03 * hotel, cfg.port_steps), 0.0, None)
    samples = [(float(p), 0) for p in sail] + [(float(p), 1) for p in port]
    return LoadProfile(pid, tuple(samples), cfg.step_seconds, label, float(plateau))


def generate(
    seed: int,
    n_profiles: int,
    cfg: ProfileConfig | None = None,
    feasible: Callable[[LoadProfile], bool] | None = None,
    max_tries: int = 50,
) -> ProfileSet:
    """Deterministic synthetic profile set split into train/validation.

    ``feasible`` optionally rejects profiles the plant cannot serve; rejected
    draws are redrawn (same class) from the profile's own RNG stream.
    """
    cfg = cfg or ProfileConfig()
    if n_profiles < 2:
        raise ProfileError("n_profiles must be >= 2")
    mix = cfg.class_mix
    if len(mix) != 3 or any(w < 0 or not math.isfinite(w) for w in mix) or not math.isclose(sum(mix), 1.0, abs_tol=1e-9):
        raise ProfileError(f"invalid class mix {mix}: need three non-negative weights summing to 1")
    labels = [c for c, k in zip(CLASSES, _class_counts(n_profiles, mix)) for _ in range(k)]
    root = np.random.SeedSequence(seed)
    order_rng, *streams = [np.random.default_rng(s) for s in root.spawn(n_profiles + 1)]
    labels = [labels[i] for i in order_rng.permutation(n_profiles)]
    profiles = []
    for i, (label, rng) in enumerate(zip(labels, streams)):
        pid = f"s{seed}-{i:05d}"
        for _ in range(max_tries):
            prof = make_profile(rng, pid, label, cfg)
            if feasible is None or feasible(prof):
                break
        else:
            raise ProfileError(f"could not draw a feasible {label} profile in {max_tries} tries")
        profiles.append(prof)
    n_val = max(1, int(round(cfg.validation_fraction * n_profiles)))
    n_val = min(n_val, n_profiles - 1)
    perm = order_rng.permutation(n_profiles)
    val_idx = set(perm[:n_val].tolist())
    train = tuple(p for i, p in enumerate(profiles) if i not in val_idx)
    val = tuple(p for i, p in enumerate(profiles) if i in val_idx)
    return ProfileSet(train, val, seed)


def write_csv(profile: LoadProfile, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# id: {profile.id}\n# class: {profile.class_label}\n# step_seconds: {profile.step_seconds!r}\n")
        if profile.plateau_kw is not None:
            fh.write(f"# plateau_kw: {profile.plateau_kw!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for i, (p, s) in enumerate(profile.samples):
            w.writerow([repr(i * profile.step_seconds), repr(p), s])


def read_csv(path: str | Path) -> LoadProfile:
    path = Path(path)
    meta = {"id": path.stem, "class": "moderate"}
    samples: list[tuple[float, int]] = []
    times: list[float] = []
    header_seen = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                if header_seen:
                    raise ProfileError("comment after header", lineno)
                key, _, value = text[1:].partition(":")
                meta[key.strip()] = value.strip()
                continue
            fields = next(csv.reader([text]))
            if not header_seen:
                if [f.strip() for f in fields] != HEADER:
                    raise ProfileError(f"expected header {','.join(HEADER)}", lineno)
                header_seen = True
                continue
            if len(fields) != 3:
                raise ProfileError(f"expected 3 fields, got {len(fields)}", lineno)
            try:
                t, p, s = float(fields[0]), float(fields[1]), int(fields[2])
            except ValueError as exc:
                raise ProfileError(f"malformed row: {exc}", lineno) from None
            if not math.isfinite(p) or p < 0:
                raise ProfileError(f"negative or non-finite demand {fields[1]}", lineno)
            if s not in (0, 1):
                raise ProfileError(f"spa must be 0 or 1, got {s}", lineno)
            if samples and s != samples[-1][1] and (s == 0 or any(x[1] == 1 for x in samples)):
                raise ProfileError("spa may switch from 0 to 1 only once", lineno)
            samples.append((p, s))
            times.append(t)
    if not header_seen:
        raise ProfileError("missing header")
    if not samples:
        raise ProfileError("empty profile")
    step = times[1] - times[0] if len(times) > 1 else float(meta.get("step_seconds", 60.0))
    if len(times) > 1 and any(abs((b - a) - step) > 1e-9 for a, b in zip(times, times[1:])):
        raise ProfileError("non-uniform time step")
    plateau = float(meta["plateau_kw"]) if "plateau_kw" in meta else None
    return LoadProfile(meta["id"], tuple(samples), step, meta.get("class", "moderate"), plateau)
