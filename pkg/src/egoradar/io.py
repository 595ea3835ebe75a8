"""File formats: RBR1 cube files, CSV tables, images and YAML config/scene files."""
from __future__ import annotations

import csv
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, RadarConfig, preset
from .dsp import RadarImage
from .simulate import EgoTrajectory, GroundTruthFrame, PointTarget, Scene, SceneError
from . import scenarios

CUBE_MAGIC = b"RBR1"
_HEADER = struct.Struct("<4s5I")

POINTCLOUD_COLUMNS = ("frame", "range_m", "doppler_mps", "azimuth_rad", "elevation_rad", "magnitude")
ESTIMATE_COLUMNS = ("frame", "vx", "vy", "vz", "k", "num_inliers", "objective")
PROFILE_COLUMNS = ("range_m", "pre_dB", "post_dB")
TRUTH_COLUMNS = ("frame", "time_s", "vx", "vy", "vz")
TARGET_COLUMNS = ("frame", "target", "range_m", "doppler_mps", "azimuth_rad", "elevation_rad", "static")


class FormatError(ValueError):
    """Malformed input file; the message carries the path and, where known, the line."""


def fmt(x) -> str:
    """Shortest round-tripping text for a number (stable across runs); strings pass through."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# --------------------------------------------------------------------------
# cube files

class CubeWriter:
    """Streams frames of one (N_s, N_c, N_h, N_e) geometry into an RBR1 file."""

    def __init__(self, path, shape: tuple[int, int, int, int], num_frames: int):
        self.path = Path(path)
        self.shape = tuple(int(n) for n in shape)
        self.num_frames = int(num_frames)
        self.written = 0
        self._fh = open(self.path, "wb")
        self._fh.write(_HEADER.pack(CUBE_MAGIC, *self.shape, self.num_frames))

    def write(self, frame: np.ndarray):
        frame = np.asarray(frame)
        if frame.shape != self.shape:
            raise FormatError(f"frame shape {frame.shape} does not match header {self.shape}")
        if self.written >= self.num_frames:
            raise FormatError("more frames than declared in the header")
        # sample index fastest: write the axes reversed in C order
        self._fh.write(np.ascontiguousarray(frame.transpose(3, 2, 1, 0), dtype="<c8").tobytes())
        self.written += 1

    def close(self):
        self._fh.close()
        if self.written != self.num_frames:
            raise FormatError(f"{self.path}: wrote {self.written} of {self.num_frames} declared frames")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()


def write_cube(path, frames) -> None:
    """Write an (F, N_s, N_c, N_h, N_e) complex array."""
    frames = np.asarray(frames)
    if frames.ndim != 5:
        raise FormatError("cube array must be (frames, N_s, N_c, N_h, N_e)")
    with CubeWriter(path, frames.shape[1:], frames.shape[0]) as w:
        for f in frames:
            w.write(f)


def read_cube_header(path) -> tuple[int, int, int, int, int]:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, *dims = _HEADER.unpack(raw)
    if magic != CUBE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CUBE_MAGIC!r}")
    if min(dims[:4]) < 1:
        raise FormatError(f"{path}: zero-sized dimension in header {tuple(dims)}")
    return tuple(dims)


def read_cube(path, frames=None) -> np.ndarray:
    """Frames of an RBR1 file as complex128, shape (F, N_s, N_c, N_h, N_e).

    ``frames`` optionally selects frame indices; only those are read.
    """
    path = Path(path)
    ns, nc, nh, ne, nf = read_cube_header(path)
    per_frame = ns * nc * nh * ne
    expected = _HEADER.size + 8 * per_frame * nf
    size = path.stat().st_size
    if size != expected:
        raise FormatError(f"{path}: size {size} bytes, header implies {expected}")
    data = np.memmap(path, dtype="<c8", mode="r", offset=_HEADER.size, shape=(nf, ne, nh, nc, ns))
    idx = range(nf) if frames is None else list(frames)
    for i in idx:
        if not 0 <= i < nf:
            raise FormatError(f"{path}: frame {i} not in [0, {nf})")
    out = np.stack([np.asarray(data[i]).transpose(3, 2, 1, 0) for i in idx]) if idx else np.zeros((0, ns, nc, nh, ne))
    return np.ascontiguousarray(out, dtype=np.complex128)


# --------------------------------------------------------------------------
# CSV tables

def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def read_csv(path, columns) -> np.ndarray:
    """Numeric table with exactly the given header; (N, len(columns)) float array."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != tuple(columns):
            raise FormatError(f"{path}:1: expected header {','.join(columns)}, got {header}")
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise FormatError(f"{path}:{line}: expected {len(columns)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{line}: {exc}") from exc
    return np.array(rows, float).reshape(-1, len(columns))


def pointcloud_rows(frame: int, cloud: np.ndarray):
    for det in np.asarray(cloud, float).reshape(-1, 5):
        yield (frame, *det)


def read_pointclouds(path) -> dict[int, np.ndarray]:
    """Point cloud CSV -> {frame: (N, 5) array}."""
    arr = read_csv(path, POINTCLOUD_COLUMNS)
    out: dict[int, np.ndarray] = {}
    for f in np.unique(arr[:, 0]).astype(int):
        out[int(f)] = arr[arr[:, 0] == f, 1:]
    return out


def estimate_row(frame: int, est) -> tuple:
    return (frame, *est.velocity, est.ambiguity_k, est.num_inliers, est.final_objective)


def read_estimates(path) -> np.ndarray:
    return read_csv(path, ESTIMATE_COLUMNS)


def truth_rows(truth: GroundTruthFrame):
    return (truth.frame_index, truth.time_s, *truth.ego_velocity)


def target_rows(truth: GroundTruthFrame):
    for idx, row, st in zip(truth.target_indices, truth.targets, truth.is_static):
        yield (truth.frame_index, idx, *row, bool(st))


# --------------------------------------------------------------------------
# images

def write_image(path, image: RadarImage | np.ndarray, axes=None, coords=None, db_range: float = 60.0) -> Path:
    """Write a 2D image as a CSV grid or an 8-bit PGM, plus ``<path>.axes.txt``.

    The sidecar lists, per axis (rows first): name, bin count, first and
    last coordinate.  PGM grey levels span ``db_range`` dB below the image
    maximum.
    """
    path = Path(path)
    if isinstance(image, RadarImage):
        axes = image.axes
        coords = [image.coords[a] for a in axes]
        data = image.data
    else:
        data = np.asarray(image, float)
    if data.ndim != 2:
        raise FormatError(f"image must be 2D, got shape {data.shape}")
    axes = tuple(axes or ("row", "col"))
    coords = coords or [np.arange(n, dtype=float) for n in data.shape]
    suffix = path.suffix.lower()
    if suffix == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in data:
                w.writerow([fmt(x) for x in row])
    elif suffix == ".pgm":
        peak = data.max()
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(data / peak) if peak > 0 else np.full(data.shape, -np.inf)
        grey = np.clip(np.round((db + db_range) / db_range * 255.0), 0, 255).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
            fh.write(grey.tobytes())
    else:
        raise FormatError(f"{path}: image format must be .csv or .pgm")
    lines = [f"{name} {len(c)} {fmt(c[0])} {fmt(c[-1])}" for name, c in zip(axes, coords)]
    if suffix == ".pgm":
        lines.append(f"scale_db {fmt(-db_range)} 0.0")
    Path(str(path) + ".axes.txt").write_text("\n".join(lines) + "\n")
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported")
    body = parts[4]
    if len(body) != w * h:
        raise FormatError(f"{path}: pixel data has {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, np.uint8).reshape(h, w)


# --------------------------------------------------------------------------
# YAML with line numbers

class _LineDict(dict):
    """Mapping that remembers the 1-based source line of every key."""

    lines: dict
    start_line: int


class _Loader(yaml.SafeLoader):
    pass


class _DuplicateKey(FormatError):
    def __init__(self, line: int, key):
        super().__init__(f"duplicate key {key!r}")
        self.line = line


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.lines = {}
    out.start_line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise _DuplicateKey(key_node.start_mark.line + 1, key)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    try:
        doc = yaml.load(text, Loader=_Loader)
    except _DuplicateKey as exc:
        raise FormatError(f"{path}:{exc.line}: {exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f":{mark.line + 1}" if mark is not None else ""
        raise FormatError(f"{path}{where}: {getattr(exc, 'problem', None) or exc}") from exc
    if doc is None:
        doc = _LineDict()
        doc.lines, doc.start_line = {}, 1
    if not isinstance(doc, dict):
        raise FormatError(f"{path}:1: top level must be a mapping")
    doc_path = path
    _tag_paths(doc, doc_path)
    return doc


def _tag_paths(node, path):
    if isinstance(node, _LineDict):
        node.path = path
        for v in node.values():
            _tag_paths(v, path)
    elif isinstance(node, list):
        for v in node:
            _tag_paths(v, path)


def where(node, key=None) -> str:
    """``path:line`` of a key (or of the mapping itself) for diagnostics."""
    path = getattr(node, "path", "<config>")
    lines = getattr(node, "lines", {})
    line = lines.get(key) if key is not None else None
    if line is None:
        line = getattr(node, "start_line", None)
    return f"{path}:{line}" if line else str(path)


def section(node, key, required: bool = False) -> dict:
    value = node.get(key)
    if value is None:
        if required:
            raise FormatError(f"{where(node)}: missing section {key!r}")
        empty = _LineDict()
        empty.lines, empty.start_line = {}, getattr(node, "lines", {}).get(key, getattr(node, "start_line", 0))
        empty.path = getattr(node, "path", "<config>")
        return empty
    if not isinstance(value, dict):
        raise FormatError(f"{where(node, key)}: {key!r} must be a mapping")
    return value


def check_keys(node, allowed) -> None:
    for key in node:
        if key not in allowed:
            raise FormatError(f"{where(node, key)}: unknown key {key!r} (allowed: {', '.join(sorted(allowed))})")


def get_number(node, key, default=None, kind=float, minimum=None):
    if key not in node:
        return default
    value = node[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"{where(node, key)}: {key!r} must be a number, got {value!r}")
    if kind is int and float(value) != int(value):
        raise FormatError(f"{where(node, key)}: {key!r} must be an integer, got {value!r}")
    value = kind(value)
    if minimum is not None and value < minimum:
        raise FormatError(f"{where(node, key)}: {key!r} must be >= {minimum}, got {value!r}")
    return value


def get_vector(node, key, n: int = 3, default=None):
    if key not in node:
        return default
    value = node[key]
    if (not isinstance(value, list) or len(value) != n
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)):
        raise FormatError(f"{where(node, key)}: {key!r} must be a list of {n} numbers, got {value!r}")
    if not all(np.isfinite(value)):
        raise FormatError(f"{where(node, key)}: {key!r} must be finite")
    return tuple(float(x) for x in value)


def radar_from_node(node) -> RadarConfig:
    """``radar:`` section: optional ``preset`` plus any RadarConfig field."""
    names = {f.name for f in fields(RadarConfig)}
    check_keys(node, names | {"preset"})
    overrides = {}
    for key in node:
        if key == "preset":
            continue
        value = node[key]
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise FormatError(f"{where(node, key)}: {key!r} must be a number")
        overrides[key] = value
    name = node.get("preset", "paper_sim")
    try:
        return preset(str(name), **overrides)
    except (ConfigError, TypeError, ValueError) as exc:
        key = next(iter(overrides), "preset")
        raise FormatError(f"{where(node, key if key in node else None)}: {exc}") from exc


SCENE_KEYS = {"preset", "num_frames", "noise_std", "seed", "ego", "targets", "out_of_range"}


def scene_from_node(node, seed: int | None = None) -> Scene:
    """``scene:`` section: a named scenario or an explicit ego and target list."""
    check_keys(node, SCENE_KEYS)
    num_frames = get_number(node, "num_frames", 40, int, 1)
    noise = get_number(node, "noise_std", 0.0, float, 0.0)
    scene_seed = get_number(node, "seed", 0, int) if seed is None else int(seed)
    if "preset" in node:
        name = node["preset"]
        if name != "paper_drive":
            raise FormatError(f"{where(node, 'preset')}: unknown scene preset {name!r} (known: paper_drive)")
        extra = set(node) - {"preset", "num_frames", "noise_std", "seed"}
        if extra:
            k = sorted(extra)[0]
            raise FormatError(f"{where(node, k)}: {k!r} cannot be combined with a scene preset")
        return scenarios.paper_drive(num_frames, noise, scene_seed)
    ego = section(node, "ego", required=True)
    check_keys(ego, {"initial_velocity", "acceleration"})
    trajectory = EgoTrajectory(get_vector(ego, "initial_velocity", default=(0.0, 0.0, 0.0)),
                               get_vector(ego, "acceleration", default=(0.0, 0.0, 0.0)))
    raw_targets = node.get("targets", []) or []
    if not isinstance(raw_targets, list):
        raise FormatError(f"{where(node, 'targets')}: 'targets' must be a list")
    targets = []
    for i, t in enumerate(raw_targets):
        if not isinstance(t, dict):
            raise FormatError(f"{where(node, 'targets')}: target {i} must be a mapping")
        check_keys(t, {"position", "velocity", "amplitude", "label"})
        pos = get_vector(t, "position")
        if pos is None:
            raise FormatError(f"{where(t)}: target {i} lacks 'position'")
        try:
            targets.append(PointTarget(pos, get_vector(t, "velocity", default=(0.0, 0.0, 0.0)),
                                       get_number(t, "amplitude", 1.0, float, 0.0), str(t.get("label", ""))))
        except SceneError as exc:
            raise FormatError(f"{where(t)}: {exc}") from exc
    mode = node.get("out_of_range", "error")
    try:
        return Scene(trajectory, tuple(targets), num_frames, noise, scene_seed, out_of_range=mode)
    except SceneError as exc:
        raise FormatError(f"{where(node)}: {exc}") from exc
