"""On-disk dataset layout: one directory per sample holding PPM frames,
an event file (CSV or binary), and a manifest JSON, plus a top-level
dataset manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError
from .events import (EventStream, Sample, VideoClip, parse_events_binary,
                     parse_events_csv, write_events_binary, write_events_csv)


def write_ppm(frame: np.ndarray, path: str | Path) -> None:
    """Binary P6 PPM, 8-bit, from floats in [0, 1]."""
    h, w = frame.shape[:2]
    data = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
    with Path(path).open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise ParseError(f"{path}: not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ParseError(f"{path}: only 8-bit PPM supported")
    pixels = np.frombuffer(parts[3][:w * h * 3], dtype=np.uint8)
    if pixels.size != w * h * 3:
        raise ParseError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3).astype(np.float64) / 255.0


def write_sample(sample: Sample, directory: str | Path,
                 event_format: str = "csv") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(sample.clip.frames):
        write_ppm(frame, directory / f"frame_{i:03d}.ppm")
    if event_format == "csv":
        write_events_csv(sample.events, directory / "events.csv")
    else:
        write_events_binary(sample.events, directory / "events.bin")
    manifest = {
        "sample_id": sample.sample_id,
        "label": sample.label,
        "timestamps": [int(t) for t in sample.clip.timestamps],
        "resolution": list(sample.events.resolution),
        "event_format": event_format,
        "n_frames": len(sample.clip),
        "n_events": len(sample.events),
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_sample(directory: str | Path) -> Sample:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    frames = [read_ppm(directory / f"frame_{i:03d}.ppm")
              for i in range(manifest["n_frames"])]
    clip = VideoClip(frames, np.asarray(manifest["timestamps"], np.int64))
    resolution = tuple(manifest["resolution"])
    if manifest["event_format"] == "csv":
        events = parse_events_csv(directory / "events.csv", resolution)
    else:
        events = parse_events_binary(directory / "events.bin")
    return Sample(clip, events, manifest["label"], manifest["sample_id"])


def write_dataset(samples: list[Sample], labels: list[str],
                  out_dir: str | Path, event_format: str = "csv",
                  split: str = "train") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    histogram: dict[str, int] = {}
    ids = []
    for sample in samples:
        name = f"{split}_{sample.sample_id}"
        write_sample(sample, out_dir / name, event_format)
        histogram[labels[sample.label]] = histogram.get(labels[sample.label], 0) + 1
        ids.append(name)
    manifest_path = out_dir / f"dataset_{split}.json"
    manifest_path.write_text(json.dumps({
        "split": split,
        "labels": labels,
        "n_samples": len(samples),
        "class_histogram": histogram,
        "samples": ids,
        "event_format": event_format,
    }, indent=2, sort_keys=True) + "\n")
    return manifest_path


def read_dataset(out_dir: str | Path, split: str = "train") -> list[Sample]:
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / f"dataset_{split}.json").read_text())
    return [read_sample(out_dir / name) for name in manifest["samples"]]
