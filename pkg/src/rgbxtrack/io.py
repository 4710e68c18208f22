"""File formats: portable pixmaps, sequence manifests, parameter files, run artifacts."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .boxes import BBox
from .errors import ArtifactError, DimensionError
from .tcm import Heatmap
from .tokenizer import Frame

PARAMS_MAGIC = "RGBXTRACK-PARAMS"
PARAMS_VERSION = 1


# -- images and manifests ---------------------------------------------------------


def read_image(path: str | Path) -> np.ndarray:
    """Read a PPM/PGM file as ``[3, H, W]`` floats in ``[0, 1]``; gray images repeat."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"cannot read image {path}: {exc}") from exc
    arr = arr.astype(np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    return arr


def write_image(path: str | Path, img: np.ndarray) -> None:
    """Write ``[3, H, W]`` (PPM) or ``[H, W]`` (PGM) floats in ``[0, 1]`` as 8-bit."""
    img = np.asarray(img, dtype=np.float64)
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.ndim == 3:
        data = data.transpose(1, 2, 0)
    try:
        Image.fromarray(data).save(path)
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"cannot write image {path}: {exc}") from exc


def _parse_manifest_line(line: str, lineno: int, path) -> tuple[str, str, BBox | None]:
    parts = line.split()
    if len(parts) not in (2, 6):
        raise ArtifactError(f"{path}:{lineno}: expected 'rgb x [x_c y_c w h]', got {line!r}")
    box = None
    if len(parts) == 6:
        try:
            box = BBox(*(float(v) for v in parts[2:]))
        except ValueError as exc:
            raise ArtifactError(f"{path}:{lineno}: bad box: {exc}") from exc
    return parts[0], parts[1], box


def load_sequence(manifest: str | Path, modality_tag: str = "thermal") -> list[Frame]:
    """Frames listed one per line; relative paths resolve against the manifest folder."""
    manifest = Path(manifest)
    try:
        lines = manifest.read_text().splitlines()
    except OSError as exc:
        raise ArtifactError(f"cannot read manifest {manifest}: {exc}") from exc
    frames = []
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rgb_path, x_path, box = _parse_manifest_line(line, n, manifest)
        rgb = read_image(manifest.parent / rgb_path)
        x = read_image(manifest.parent / x_path)
        try:
            frames.append(Frame(rgb, x, modality_tag, box))
        except DimensionError as exc:
            raise ArtifactError(f"{manifest}:{n}: {exc}") from exc
    if not frames:
        raise ArtifactError(f"manifest {manifest} lists no frames")
    return frames


def write_sequence(frames: list[Frame], directory: str | Path, name: str = "manifest.txt") -> Path:
    """Write frames as ``NNNN_rgb.ppm`` / ``NNNN_x.ppm`` plus a manifest."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactError(f"cannot create {directory}: {exc}") from exc
    lines = []
    for t, fr in enumerate(frames):
        rgb_name, x_name = f"{t:04d}_rgb.ppm", f"{t:04d}_x.ppm"
        write_image(directory / rgb_name, fr.rgb)
        write_image(directory / x_name, fr.x)
        line = f"{rgb_name} {x_name}"
        if fr.gt_box is not None:
            b = fr.gt_box
            line += f" {b.x_c!r} {b.y_c!r} {b.w!r} {b.h!r}"
        lines.append(line)
    path = directory / name
    write_text(path, "\n".join(lines) + "\n")
    return path


# -- parameters ------------------------------------------------------------------------


def save_params(path: str | Path, state: dict[str, np.ndarray]) -> None:
    """Text header (names and shapes) followed by raw little-endian float64 values."""
    header = [f"{PARAMS_MAGIC} {PARAMS_VERSION}", f"tensors {len(state)}"]
    chunks = []
    for name, arr in state.items():
        arr = np.asarray(arr, dtype="<f8")
        if any(c.isspace() for c in name):
            raise ArtifactError(f"parameter name {name!r} contains whitespace")
        header.append(" ".join([name, str(arr.ndim), *map(str, arr.shape)]))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    header.append("end")
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            for c in chunks:
                fh.write(c)
    except OSError as exc:
        raise ArtifactError(f"cannot write parameters to {path}: {exc}") from exc


def _parse_params_header(text: str, path) -> list[tuple[str, tuple[int, ...]]]:
    lines = text.split("\n")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != PARAMS_MAGIC:
        raise ArtifactError(f"{path}: not a parameter file")
    if int(magic[1]) != PARAMS_VERSION:
        raise ArtifactError(f"{path}: unsupported version {magic[1]}")
    count = int(lines[1].split()[1])
    entries = []
    for line in lines[2:2 + count]:
        name, ndim, *dims = line.split()
        if len(dims) != int(ndim):
            raise ArtifactError(f"{path}: malformed header line {line!r}")
        entries.append((name, tuple(int(d) for d in dims)))
    if len(entries) != count:
        raise ArtifactError(f"{path}: header lists {len(entries)} of {count} tensors")
    return entries


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read parameters from {path}: {exc}") from exc
    end = raw.find(b"\nend\n")
    if end < 0:
        raise ArtifactError(f"{path}: missing header terminator")
    try:
        entries = _parse_params_header(raw[:end].decode("ascii", errors="replace"), path)
    except (ValueError, IndexError) as exc:
        raise ArtifactError(f"{path}: malformed header: {exc}") from exc
    state, offset = {}, end + len(b"\nend\n")
    for name, shape in entries:
        n = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * n > len(raw):
            raise ArtifactError(f"{path}: truncated data for {name}")
        state[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        offset += 8 * n
    if offset != len(raw):
        raise ArtifactError(f"{path}: {len(raw) - offset} trailing bytes")
    return state


# -- run artifacts ------------------------------------------------------------------------------


def write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc}") from exc


def ensure_dir(path: str | Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactError(f"cannot create output directory {path}: {exc}") from exc
    return path


def write_json(path: str | Path, obj) -> None:
    write_text(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_jsonl(path: str | Path, records: list[dict]) -> None:
    write_text(Path(path), "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def read_jsonl(path: str | Path) -> list[dict]:
    try:
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line]
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc


def heatmap_to_gray(h: Heatmap) -> np.ndarray:
    """Min-max scaled ``[rows, cols]`` image; a constant map becomes all zeros."""
    v = h.as_grid().astype(np.float64)
    span = v.max() - v.min()
    return (v - v.min()) / span if span > 0 else np.zeros_like(v)


def write_heatmap(path: str | Path, h: Heatmap, csv_path: str | Path | None = None) -> None:
    """One graymap pixel per search token, brightest at the map's maximum."""
    write_image(path, heatmap_to_gray(h))
    if csv_path is not None:
        rows = [",".join(repr(float(v)) for v in row) for row in h.as_grid()]
        write_text(Path(csv_path), "\n".join(rows) + "\n")


def write_loss_csv(path: str | Path, rows: list[dict]) -> None:
    """Columns: stage, step, loss, then every component in first-row order."""
    if not rows:
        write_text(Path(path), "stage,step,loss\n")
        return
    fields = ["stage", "step", "loss"] + [k for k in rows[0] if k not in ("stage", "step", "loss")]
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for r in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc}") from exc
