"""Toy Monte Carlo work pipeline: event generation, detector transport,
digitization and track reconstruction, plus canonical result digests and an
analytic cost model.

The model is deliberately small but fully specified so that every stage can
be checked against brute-force oracles:

* Event generation draws, per event, 1 + (u64 mod 3) primaries. A primary
  has energy ``E = beam_energy * (-ln u)`` with ``u`` uniform in (0, 1) and a
  slope ``t`` uniform in (-1, 1).
* Transport walks each particle across detector planes at ``x = 1..n_layers``
  (stored 0-based in ``HitRecord.layer``). At each plane the particle
  deposits ``0.1 * E`` and records ``u = t * x + N(0, smear_sigma)``. After a
  crossing it splits with probability ``E / (E + split_scale)`` into two
  children of energy ``E / 2`` and slopes ``t +- 0.05`` that continue from
  the next plane. Particles with ``E < energy_cut`` are dropped before
  crossing anything. ``step_count`` counts plane crossings.
* Digitization snaps positions to a pitch grid and quantizes deposits into
  integer ADC counts.
* Reconstruction greedily associates digis into tracks seeded on the first
  plane and fits a straight line by ordinary least squares.

All randomness comes from splitmix64 substreams keyed by
``(work_seed, config index, event-or-primary index, phase)``, so results are
identical across runs, platforms, and degrees of parallelism.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from .rng import Splitmix64, stream_seed

DEPOSIT_FRACTION = 0.1
SPLIT_SLOPE_DELTA = 0.05
DEFAULT_PITCH = 0.01
DEFAULT_ADC_GAIN = 0.05

# Floats are quantized to this grid before hashing so digests absorb
# platform-level rounding noise while still distinguishing real differences.
DIGEST_QUANTUM = 1e-6

_PHASE_GENERATE = 0
_PHASE_TRANSPORT = 1

_I64_MAX = (1 << 63) - 1
_I64_MIN = -(1 << 63)


@dataclass(frozen=True)
class ConfigFlag:
    """One work configuration: detector resolution and split scale."""

    index: int
    smear_sigma: float
    split_scale: float


@dataclass(frozen=True)
class SimulationParameters:
    """The full work definition broadcast for one round."""

    work_seed: int
    n_events: int
    beam_energy: float
    energy_cut: float
    n_layers: int
    configs: tuple[ConfigFlag, ...]

    def validate(self) -> None:
        if self.n_events < 0:
            raise ValueError("n_events must be >= 0")
        if self.beam_energy <= 0:
            raise ValueError("beam_energy must be > 0")
        if self.energy_cut <= 0:
            raise ValueError("energy_cut must be > 0")
        if self.n_layers < 2:
            raise ValueError("n_layers must be >= 2")
        if len(self.configs) < 1:
            raise ValueError("at least one config required")
        for c in self.configs:
            if c.smear_sigma < 0:
                raise ValueError("smear_sigma must be >= 0")
            if c.split_scale <= 0:
                raise ValueError("split_scale must be > 0")
        if tuple(c.index for c in self.configs) != tuple(range(len(self.configs))):
            raise ValueError("config indices must be 0..C-1 in order")


@dataclass(frozen=True)
class HitRecord:
    layer: int  # 0-based plane index; the plane coordinate is layer + 1
    u: float
    e_dep: float


@dataclass(frozen=True)
class DigiRecord:
    layer: int
    u_q: float  # u snapped to the pitch grid
    adc: int


@dataclass(frozen=True)
class TrackRecord:
    a: float  # intercept of the fitted line u = a + b * x
    b: float  # slope
    adc_sum: int
    n_hits: int


@dataclass(frozen=True)
class ConfigResult:
    """Result of one configuration: fitted tracks plus the measurements each
    track claimed (plane coordinate, grid position), and the work done."""

    index: int
    tracks: tuple[TrackRecord, ...]
    track_hits: tuple[tuple[tuple[int, float], ...], ...]
    step_count: int


@dataclass(frozen=True)
class SimulationResult:
    per_config: tuple[ConfigResult, ...]
    digest: bytes


def make_parameters(
    work_seed: int,
    *,
    n_events: int,
    beam_energy: float,
    energy_cut: float,
    n_layers: int,
    n_configs: int,
    smear_sigma: float,
    split_scale: float,
) -> SimulationParameters:
    """Build parameters with ``n_configs`` identical-knob configurations."""
    configs = tuple(ConfigFlag(i, smear_sigma, split_scale) for i in range(n_configs))
    params = SimulationParameters(
        work_seed=work_seed,
        n_events=n_events,
        beam_energy=beam_energy,
        energy_cut=energy_cut,
        n_layers=n_layers,
        configs=configs,
    )
    params.validate()
    return params


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------

def generate_events(params: SimulationParameters, config: ConfigFlag) -> list[tuple[float, float]]:
    """Generate primaries (energy, slope) for every event of one config.

    Each event has its own splitmix64 stream keyed by
    (work_seed, config.index, event index, generate-phase); per primary the
    draw order is: energy u, slope u.
    """
    primaries: list[tuple[float, float]] = []
    for event in range(params.n_events):
        rng = Splitmix64(stream_seed(params.work_seed, config.index, event, _PHASE_GENERATE))
        count = 1 + rng.next_below(3)
        for _ in range(count):
            energy = params.beam_energy * -math.log(rng.next_unit())
            slope = 2.0 * rng.next_unit() - 1.0
            primaries.append((energy, slope))
    return primaries


def transport_and_respond(
    primaries: Sequence[tuple[float, float]],
    params: SimulationParameters,
    config: ConfigFlag,
) -> tuple[list[HitRecord], int]:
    """Walk each primary's particle tree through the detector planes.

    Per crossing the draw order is: smear gaussian (two u64), split uniform.
    Children are pushed (t + delta) then (t - delta), so the lower-slope
    child is transported first. Returns the hits and the crossing count.
    """
    hits: list[HitRecord] = []
    steps = 0
    cut = params.energy_cut
    n_layers = params.n_layers
    for pi, (energy, slope) in enumerate(primaries):
        rng = Splitmix64(stream_seed(params.work_seed, config.index, pi, _PHASE_TRANSPORT))
        stack: list[tuple[float, float, int]] = [(energy, slope, 1)]
        while stack:
            e, t, plane = stack.pop()
            if e < cut:
                continue  # dropped immediately, no crossings
            while plane <= n_layers:
                steps += 1
                noise = rng.next_gauss() * config.smear_sigma
                hits.append(HitRecord(layer=plane - 1, u=t * plane + noise, e_dep=DEPOSIT_FRACTION * e))
                split = rng.next_unit() < e / (e + config.split_scale)
                plane += 1
                if split:
                    stack.append((0.5 * e, t + SPLIT_SLOPE_DELTA, plane))
                    stack.append((0.5 * e, t - SPLIT_SLOPE_DELTA, plane))
                    break
    return hits, steps


def digitize(
    hits: Iterable[HitRecord],
    pitch: float = DEFAULT_PITCH,
    adc_gain: float = DEFAULT_ADC_GAIN,
) -> list[DigiRecord]:
    """Snap hit positions to the pitch grid and floor deposits into ADC counts."""
    if pitch <= 0:
        raise ValueError("pitch must be > 0")
    if adc_gain <= 0:
        raise ValueError("adc_gain must be > 0")
    return [
        DigiRecord(layer=h.layer, u_q=round(h.u / pitch) * pitch, adc=math.floor(h.e_dep / adc_gain))
        for h in hits
    ]


def fit_line(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Ordinary least squares for u = a + b * x; needs >= 2 distinct x."""
    n = len(points)
    sx = sum(p[0] for p in points)
    su = sum(p[1] for p in points)
    sxx = sum(p[0] * p[0] for p in points)
    sxu = sum(p[0] * p[1] for p in points)
    det = n * sxx - sx * sx
    if det == 0:
        raise ValueError("degenerate fit: need measurements at distinct planes")
    b = (n * sxu - sx * su) / det
    a = (su - b * sx) / n
    return a, b


class _TrackBuild:
    __slots__ = ("points", "adc", "n", "sx", "su", "sxx", "sxu")

    def __init__(self, plane: int, digi: DigiRecord):
        self.points: list[tuple[int, float]] = []
        self.adc = 0
        self.n = 0
        self.sx = 0.0
        self.su = 0.0
        self.sxx = 0.0
        self.sxu = 0.0
        self.claim(plane, digi)

    def claim(self, plane: int, digi: DigiRecord) -> None:
        self.points.append((plane, digi.u_q))
        self.adc += digi.adc
        self.n += 1
        self.sx += plane
        self.su += digi.u_q
        self.sxx += plane * plane
        self.sxu += plane * digi.u_q

    def predict(self, plane: int) -> float:
        if self.n == 1:
            # single point: extrapolate the line through the origin
            return (self.su / self.sx) * plane
        det = self.n * self.sxx - self.sx * self.sx
        b = (self.n * self.sxu - self.sx * self.su) / det
        a = (self.su - b * self.sx) / self.n
        return a + b * plane


def _greedy_associate(
    digis: Sequence[DigiRecord], config: ConfigFlag, pitch: float
) -> list[_TrackBuild]:
    by_layer: dict[int, list[tuple[float, int, DigiRecord]]] = {}
    for seq, d in enumerate(digis):
        by_layer.setdefault(d.layer, []).append((d.u_q, seq, d))
    if not by_layer or 0 not in by_layer:
        return []
    window = 3.0 * (config.smear_sigma + pitch)
    tracks = [_TrackBuild(1, d) for _, _, d in sorted(by_layer[0])]
    for layer in range(1, max(by_layer) + 1):
        entries = sorted(by_layer.get(layer, []))
        if not entries:
            continue
        claimed = [False] * len(entries)
        plane = layer + 1
        for trk in tracks:
            pred = trk.predict(plane)
            best = -1
            best_key: tuple[float, float] | None = None
            for j, (u_q, _, _) in enumerate(entries):
                if claimed[j]:
                    continue
                diff = abs(u_q - pred)
                if diff > window:
                    continue
                key = (diff, u_q)
                if best_key is None or key < best_key:
                    best_key = key
                    best = j
            if best >= 0:
                claimed[best] = True
                trk.claim(plane, entries[best][2])
    return tracks


def reconstruct_tracks(
    digis: Sequence[DigiRecord], config: ConfigFlag, pitch: float = DEFAULT_PITCH
) -> list[TrackRecord]:
    """Greedy association + least-squares fit; tracks sorted by (slope, intercept)."""
    return [t for t, _ in _reconstruct_with_hits(digis, config, pitch)]


def _reconstruct_with_hits(
    digis: Sequence[DigiRecord], config: ConfigFlag, pitch: float
) -> list[tuple[TrackRecord, tuple[tuple[int, float], ...]]]:
    out = []
    for trk in _greedy_associate(digis, config, pitch):
        if trk.n < 2:
            continue
        a, b = fit_line(trk.points)
        out.append((TrackRecord(a=a, b=b, adc_sum=trk.adc, n_hits=trk.n), tuple(trk.points)))
    out.sort(key=lambda th: (th[0].b, th[0].a, th[0].adc_sum, th[0].n_hits, th[1]))
    return out


def run_config(
    params: SimulationParameters,
    config: ConfigFlag,
    pitch: float = DEFAULT_PITCH,
    adc_gain: float = DEFAULT_ADC_GAIN,
) -> ConfigResult:
    """Run all four stages for one configuration."""
    primaries = generate_events(params, config)
    hits, steps = transport_and_respond(primaries, params, config)
    digis = digitize(hits, pitch, adc_gain)
    fitted = _reconstruct_with_hits(digis, config, pitch)
    return ConfigResult(
        index=config.index,
        tracks=tuple(t for t, _ in fitted),
        track_hits=tuple(h for _, h in fitted),
        step_count=steps,
    )


def run_pipeline(params: SimulationParameters, workers: int = 1) -> SimulationResult:
    """Run every configuration and assemble the canonical result.

    ``workers`` only controls how configs are evaluated; the result is
    bit-identical for any worker count because configs are independent and
    merged in index order.
    """
    params.validate()
    if workers > 1 and len(params.configs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(lambda c: run_config(params, c), params.configs))
    else:
        entries = [run_config(params, c) for c in params.configs]
    return build_result(entries)


# ---------------------------------------------------------------------------
# Canonical serialization and digests
# ---------------------------------------------------------------------------

def _q(x: float) -> int:
    v = round(x / DIGEST_QUANTUM)
    if v > _I64_MAX:
        return _I64_MAX
    if v < _I64_MIN:
        return _I64_MIN
    return v


def _track_bytes(track: TrackRecord, hits: tuple[tuple[int, float], ...]) -> bytes:
    head = struct.pack(">qqQI", _q(track.a), _q(track.b), track.adc_sum, track.n_hits)
    body = struct.pack(">I", len(hits)) + b"".join(
        struct.pack(">Iq", plane, _q(u)) for plane, u in hits
    )
    return head + body


def config_entry_bytes(entry: ConfigResult) -> bytes:
    """Canonical bytes of one per-config entry; tracks sorted by their own
    quantized encoding so byte order never depends on sub-quantum noise."""
    blobs = sorted(_track_bytes(t, h) for t, h in zip(entry.tracks, entry.track_hits))
    return struct.pack(">IQI", entry.index, entry.step_count, len(blobs)) + b"".join(blobs)


def config_entry_digest(entry: ConfigResult) -> bytes:
    return hashlib.sha256(config_entry_bytes(entry)).digest()


def canonical_digest(entries: Iterable[ConfigResult]) -> bytes:
    """SHA-256 over the quantized canonical serialization of all entries,
    sorted by config index regardless of input order."""
    ordered = sorted(entries, key=lambda e: e.index)
    payload = struct.pack(">I", len(ordered)) + b"".join(config_entry_bytes(e) for e in ordered)
    return hashlib.sha256(payload).digest()


def build_result(entries: Iterable[ConfigResult]) -> SimulationResult:
    ordered = tuple(sorted(entries, key=lambda e: e.index))
    if tuple(e.index for e in ordered) != tuple(range(len(ordered))):
        raise ValueError("per-config entries must cover indices 0..C-1 exactly once")
    return SimulationResult(per_config=ordered, digest=canonical_digest(ordered))


def params_bytes(params: SimulationParameters) -> bytes:
    """Canonical big-endian serialization of work parameters (used in block
    hashing): work_seed u64, n_events u64, beam_energy f64, energy_cut f64,
    n_layers u32, config count u32, then per config index u32 + smear f64 +
    split f64."""
    head = struct.pack(
        ">QQddI",
        params.work_seed,
        params.n_events,
        params.beam_energy,
        params.energy_cut,
        params.n_layers,
    )
    body = struct.pack(">I", len(params.configs)) + b"".join(
        struct.pack(">Idd", c.index, c.smear_sigma, c.split_scale) for c in params.configs
    )
    return head + body


# ---------------------------------------------------------------------------
# Structured text export (data-store interchange)
# ---------------------------------------------------------------------------

def result_to_record(result: SimulationResult) -> dict:
    """JSON-ready form with a documented field order: digest (hex), then
    per_config entries as {index, step_count, tracks, track_hits}."""
    return {
        "digest": result.digest.hex(),
        "per_config": [
            {
                "index": entry.index,
                "step_count": entry.step_count,
                "tracks": [
                    {"a": t.a, "b": t.b, "adc_sum": t.adc_sum, "n_hits": t.n_hits}
                    for t in entry.tracks
                ],
                "track_hits": [[[plane, u] for plane, u in hits] for hits in entry.track_hits],
            }
            for entry in result.per_config
        ],
    }


def result_from_record(record: dict) -> SimulationResult:
    """Rebuild a result and verify the embedded digest against the body."""
    entries = [
        ConfigResult(
            index=e["index"],
            tracks=tuple(
                TrackRecord(a=t["a"], b=t["b"], adc_sum=t["adc_sum"], n_hits=t["n_hits"])
                for t in e["tracks"]
            ),
            track_hits=tuple(
                tuple((plane, u) for plane, u in hits) for hits in e["track_hits"]
            ),
            step_count=e["step_count"],
        )
        for e in record["per_config"]
    ]
    result = build_result(entries)
    claimed = bytes.fromhex(record["digest"])
    if result.digest != claimed:
        raise ValueError("stored digest does not match the result body")
    return result


def export_result(result: SimulationResult, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(result_to_record(result), sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def import_result(path: str | Path) -> SimulationResult:
    return result_from_record(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Analytic cost model
# ---------------------------------------------------------------------------

def estimate_cost(params: SimulationParameters) -> float:
    """Expected total step count for these parameters.

    Exact recursion over the split/cut branching process for a particle of
    fixed energy, integrated over the exponential primary-energy law with a
    fixed-grid Simpson rule (pure Python, so the value is bit-stable).
    """
    params.validate()
    per_primary = 0.0
    for config in params.configs:
        per_primary += _expected_steps_per_primary(
            params.beam_energy, params.energy_cut, params.n_layers, config.split_scale
        )
    # events draw 1 + (u64 mod 3) primaries: mean 2 per event
    return params.n_events * 2.0 * per_primary


@lru_cache(maxsize=512)
def _expected_steps_per_primary(beam: float, cut: float, layers: int, scale: float) -> float:
    def crossings(e0: float) -> float:
        memo: dict[tuple[int, int], float] = {}

        def f(k: int, remaining: int) -> float:
            e = e0 / (1 << k)
            if remaining <= 0 or e < cut:
                return 0.0
            key = (k, remaining)
            got = memo.get(key)
            if got is not None:
                return got
            p = e / (e + scale)
            val = 1.0 + 2.0 * p * f(k + 1, remaining - 1) + (1.0 - p) * f(k, remaining - 1)
            memo[key] = val
            return val

        return f(0, layers)

    def integrand(e: float) -> float:
        return crossings(e) * math.exp(-e / beam) / beam

    lo, hi, n = cut, cut + 50.0 * beam, 1024
    h = (hi - lo) / n
    acc = integrand(lo) + integrand(hi)
    for i in range(1, n):
        acc += (4.0 if i % 2 else 2.0) * integrand(lo + i * h)
    return acc * h / 3.0
