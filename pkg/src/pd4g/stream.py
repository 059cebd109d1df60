"""Deterministic bandwidth-trace streaming simulator and ABR manifest emission.

Byte arrival is integrated exactly over piecewise-constant traces using
rational arithmetic, so layer-completion instants carry no time-stepping
error. Sizes use decimal megabytes (1e6 bytes) and throughput decimal
megabits per second, which makes the first-frame formula 8*S/B exact.
The simulator models download only; decode and render time are out of scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

from .bitstream import LayerManifest

BYTES_PER_MB = 10**6
LAYER_DESCRIPTIONS = (
    "static scaffold",
    "static scaffold + global deformation",
    "static scaffold + global deformation + local refinement",
)


class TraceParseError(ValueError):
    """A trace CSV line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class BandwidthTrace:
    """Piecewise-constant throughput timeline: (duration seconds, Mbps) segments."""

    segments: tuple[tuple[Fraction, Fraction], ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("trace requires at least one segment")
        norm = []
        for duration, mbps in self.segments:
            duration = Fraction(duration)
            mbps = Fraction(mbps)
            if duration <= 0:
                raise ValueError("segment durations must be positive")
            if mbps < 0:
                raise ValueError("throughput cannot be negative")
            norm.append((duration, mbps))
        object.__setattr__(self, "segments", tuple(norm))

    @staticmethod
    def constant(mbps, duration=Fraction(10**9)) -> "BandwidthTrace":
        return BandwidthTrace(segments=((Fraction(duration), Fraction(mbps)),))

    @staticmethod
    def from_csv(text: str) -> "BandwidthTrace":
        """Parse ``duration_s,mbps`` lines; '#' comments and blank lines ignored."""
        segments = []
        for number, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = [p.strip() for p in body.split(",")]
            if len(parts) != 2:
                raise TraceParseError(number, f"expected 'duration_s,mbps', got {line!r}")
            try:
                duration, mbps = Fraction(parts[0]), Fraction(parts[1])
            except (ValueError, ZeroDivisionError) as exc:
                raise TraceParseError(number, f"bad number in {line!r}: {exc}") from exc
            if duration <= 0:
                raise TraceParseError(number, "duration must be positive")
            if mbps < 0:
                raise TraceParseError(number, "throughput cannot be negative")
            segments.append((duration, mbps))
        if not segments:
            raise TraceParseError(0, "trace file holds no segments")
        return BandwidthTrace(segments=tuple(segments))


@dataclass(frozen=True)
class StreamEvent:
    time: Fraction
    kind: str  # "layer-complete" | "stall-begin" | "stall-end"
    layer: Optional[int]
    bytes_received: Fraction


@dataclass(frozen=True)
class StreamTimeline:
    """Chronological download events plus headline latency figures."""

    events: tuple[StreamEvent, ...]
    first_frame_time: Optional[Fraction]
    final_level: Optional[int]
    total_bytes: Fraction

    def to_json(self) -> str:
        payload = {
            "first_frame_time_s": None if self.first_frame_time is None else float(self.first_frame_time),
            "final_level": self.final_level,
            "total_bytes": float(self.total_bytes),
            "events": [
                {
                    "time_s": float(e.time),
                    "kind": e.kind,
                    "layer": e.layer,
                    "bytes_received": float(e.bytes_received),
                }
                for e in self.events
            ],
        }
        return json.dumps(payload, indent=2)


def first_frame_latency(size_mb: float, bandwidth_mbps: float) -> float:
    """Seconds until a first renderable frame: 8 * size / bandwidth.

    Decimal units throughout (MB = 1e6 bytes, Mbps = 1e6 bits/s). This is a
    lower bound: only transfer time is modeled.
    """
    if bandwidth_mbps <= 0:
        raise ValueError("bandwidth must be strictly positive")
    if size_mb < 0:
        raise ValueError("size cannot be negative")
    return 8.0 * size_mb / bandwidth_mbps


def _cumulative_bytes(manifest_or_sizes) -> list[int]:
    if isinstance(manifest_or_sizes, LayerManifest):
        sizes = list(manifest_or_sizes.cumulative_sizes)
    else:
        sizes = [int(s) for s in manifest_or_sizes]
    if not sizes:
        raise ValueError("manifest must describe at least one layer")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("cumulative layer sizes must be strictly increasing")
    return sizes


def simulate(
    manifest: Union[LayerManifest, Sequence[int]],
    trace: BandwidthTrace,
) -> StreamTimeline:
    """Integrate byte arrival over the trace and emit the layer-upgrade timeline.

    ``manifest`` supplies cumulative prefix sizes in bytes (a LayerManifest
    or a raw ascending sequence). A layer-complete event fires at the exact
    instant its prefix finishes; zero-throughput intervals emit stall
    begin/end events while the download is still incomplete. If the trace
    ends before the base layer completes the result is an incomplete-stream
    timeline (final level None), not an error.
    """
    thresholds = [Fraction(s) for s in _cumulative_bytes(manifest)]
    events: list[StreamEvent] = []
    received = Fraction(0)
    now = Fraction(0)
    next_layer = 0
    stalled = False
    done = False

    for duration, mbps in trace.segments:
        if done:
            break
        rate = mbps * BYTES_PER_MB / 8  # bytes per second, exact
        if rate == 0:
            if not stalled:
                events.append(StreamEvent(now, "stall-begin", None, received))
                stalled = True
            now += duration
            continue
        if stalled:
            events.append(StreamEvent(now, "stall-end", None, received))
            stalled = False
        seg_end = now + duration
        while next_layer < len(thresholds):
            reach = now + (thresholds[next_layer] - received) / rate
            if reach > seg_end:
                break
            events.append(
                StreamEvent(reach, "layer-complete", next_layer, thresholds[next_layer])
            )
            next_layer += 1
        if next_layer >= len(thresholds):
            done = True
            received = thresholds[-1]
            now = events[-1].time
        else:
            received += rate * duration
            now = seg_end

    if stalled and not done:
        events.append(StreamEvent(now, "stall-end", None, received))

    completions = [e for e in events if e.kind == "layer-complete"]
    first = completions[0].time if completions else None
    final = completions[-1].layer if completions else None
    return StreamTimeline(
        events=tuple(events),
        first_frame_time=first,
        final_level=final,
        total_bytes=received,
    )


def emit_abr_manifest(manifest: LayerManifest, base_url: str) -> str:
    """JSON manifest listing the layers as byte-range representations.

    Each representation addresses a prefix range [0, S_level) of the single
    container file, so an ABR client upgrades by fetching only the next
    incremental range. Output is deterministic for identical inputs.
    """
    cumulative = manifest.cumulative_sizes
    representations = []
    for level, end in enumerate(cumulative):
        representations.append(
            {
                "id": f"layer-{level}",
                "level": level,
                "description": LAYER_DESCRIPTIONS[level],
                "byte_range": {"start": 0, "end": end},
                "incremental_range": {"start": 0 if level == 0 else cumulative[level - 1], "end": end},
                "cumulative_bytes": end,
            }
        )
    payload = {
        "url": base_url,
        "total_bytes": manifest.total_bytes,
        "representations": representations,
    }
    return json.dumps(payload, indent=2)


def latency_table(
    manifests: Sequence[Union[LayerManifest, float]],
    bandwidths: Sequence[float],
    labels: Sequence[str] | None = None,
) -> list[dict]:
    """First-frame latency grid over (model size, bandwidth) pairs.

    Entries of ``manifests`` are either LayerManifest objects (their total
    size is used) or plain sizes in decimal MB. Returns one row per model
    with per-bandwidth latencies in seconds.
    """
    if any(b <= 0 for b in bandwidths):
        raise ValueError("bandwidths must be strictly positive")
    rows = []
    for i, entry in enumerate(manifests):
        if isinstance(entry, LayerManifest):
            size_mb = entry.total_bytes / BYTES_PER_MB
        else:
            size_mb = float(entry)
        label = labels[i] if labels else f"model-{i}"
        rows.append(
            {
                "label": label,
                "size_mb": size_mb,
                "latency_s": [first_frame_latency(size_mb, b) for b in bandwidths],
            }
        )
    return rows


def latency_table_csv(rows: list[dict], bandwidths: Sequence[float]) -> str:
    """CSV rendering of a latency grid, two decimal places."""
    header = "label,size_mb," + ",".join(f"latency_{b:g}mbps_s" for b in bandwidths)
    lines = [header]
    for row in rows:
        cells = ",".join(f"{v:.2f}" for v in row["latency_s"])
        lines.append(f"{row['label']},{row['size_mb']:g},{cells}")
    return "\n".join(lines) + "\n"
