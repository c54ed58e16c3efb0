"""Synthetic two-view data, preprocessing utilities, augmentation and the dataset container.

Synthetic agreement task
------------------------
Each view is a noisy blank image with one square marker placed uniformly at
random and independently per view. The marker's intensity encodes one symbol
out of an alphabet of size A. The label is positive iff both views show the
same symbol. The symbol of view A is uniform; for positives view B repeats
it, for negatives view B draws uniformly from the other A-1 symbols, so each
view alone is uniform over the alphabet in both classes.

Container format (little-endian)
--------------------------------
``magic b"XVDS" | version u16 | reserved u16 | count u64 | views u32 |
channels u32 | height u32 | width u32 | dtype b"<f4\\0"`` followed by
``count * views * C * H * W`` float32 values. The manifest is a CSV next to
the container (``<path>.csv``) with columns ``id, task, state, fold``.
"""

from __future__ import annotations

import csv
import enum
import io
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .errors import ConfigError, DegenerateInputError, FormatError

MAGIC = b"XVDS"
VERSION = 1
_HEADER = struct.Struct("<4sHHQIIII4s")
DTYPE_TAG = b"<f4\x00"
MANIFEST_COLUMNS = ("id", "task", "state", "fold")


class LabelState(enum.IntEnum):
    """Per-task label state; the first three double as 3-class targets."""

    NEG = 0
    UNC = 1
    POS = 2
    UNKNOWN = 3


STATE_NAMES = {LabelState.NEG: "neg", LabelState.UNC: "unc", LabelState.POS: "pos", LabelState.UNKNOWN: "unknown"}
STATE_BY_NAME = {v: k for k, v in STATE_NAMES.items()}


@dataclass
class DatasetContainer:
    """Paired views (N, 2, C, H, W) float32 with per-task label states (N, T)."""

    views: np.ndarray
    states: np.ndarray
    tasks: list[str]
    ids: np.ndarray
    folds: np.ndarray

    def __len__(self) -> int:
        return len(self.views)

    @property
    def view_shape(self) -> tuple[int, int, int]:
        return tuple(self.views.shape[2:])

    def subset(self, index) -> "DatasetContainer":
        return DatasetContainer(self.views[index], self.states[index], list(self.tasks), self.ids[index], self.folds[index])

    def binary_labels(self, task: int = 0) -> np.ndarray:
        return (self.states[:, task] == LabelState.POS).astype(np.int64)


@dataclass
class SampleBatch:
    views: np.ndarray  # (N, 2, C, H, W)
    states: np.ndarray  # (N, T) LabelState values
    weights: np.ndarray | None = None  # per-sample loss weights

    def labels(self, task: int = 0) -> np.ndarray:
        return (self.states[:, task] == LabelState.POS).astype(np.float64)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


@dataclass
class SynthTaskSpec:
    n: int = 2000
    image_size: int = 32
    marker_size: int = 6
    alphabet: int = 4
    noise: float = 0.1
    fold: int = 0
    id_offset: int = 0
    multitask: bool = False
    uncertain_rate: float = 0.1
    unknown_rate: float = 0.1

    def levels(self) -> np.ndarray:
        """Marker intensity of each symbol."""
        return np.linspace(1.0, 2.0, self.alphabet) if self.alphabet > 1 else np.ones(1)

    def validate(self) -> None:
        if self.n < 0:
            raise ConfigError("n must be >= 0")
        if self.alphabet < 2:
            raise ConfigError("alphabet needs at least 2 symbols")
        if not 1 <= self.marker_size <= self.image_size:
            raise ConfigError(f"marker of size {self.marker_size} does not fit a {self.image_size}px image")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")


@dataclass
class SynthTruth:
    """Generator ground truth, kept outside the container."""

    symbols: np.ndarray  # (N, 2)
    positions: np.ndarray  # (N, 2, 2) top-left (row, col) per view


def _render(size: int, marker: int, level: float, pos, noise: float, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((size, size))
    if noise > 0:
        img += rng.normal(0.0, noise, size=(size, size))
    r, c = pos
    img[r : r + marker, c : c + marker] += level
    return img


def synth_sample(spec: SynthTaskSpec, seed: int, sample_id: int):
    """One pair (2, 1, H, W), its label and the ground-truth symbols/positions."""
    rng = rngmod.stream(seed, "synth", sample_id)
    positive = (sample_id + (seed & 1)) % 2 == 0
    a = int(rng.integers(spec.alphabet))
    if positive:
        b = a
    else:
        b = int(rng.integers(spec.alphabet - 1))
        b += b >= a
    valid = spec.image_size - spec.marker_size + 1
    positions = rng.integers(valid, size=(2, 2))
    levels = spec.levels()
    views = np.stack(
        [_render(spec.image_size, spec.marker_size, levels[s], positions[v], spec.noise, rng) for v, s in enumerate((a, b))]
    )[:, None]
    return views.astype(np.float32), positive, (a, b), positions


def synth_generate(spec: SynthTaskSpec, seed: int) -> tuple[DatasetContainer, SynthTruth]:
    """``spec.n`` pairs with exactly balanced labels (up to one sample).

    Sample ids run from ``spec.id_offset``; each sample draws from its own
    stream keyed by ``(seed, id)``, so generation order does not matter.
    """
    spec.validate()
    size = spec.image_size
    views = np.zeros((spec.n, 2, 1, size, size), dtype=np.float32)
    symbols = np.zeros((spec.n, 2), dtype=np.int64)
    positions = np.zeros((spec.n, 2, 2), dtype=np.int64)
    labels = np.zeros(spec.n, dtype=bool)
    ids = np.arange(spec.id_offset, spec.id_offset + spec.n, dtype=np.int64)
    for i, sid in enumerate(ids):
        views[i], labels[i], symbols[i], positions[i] = synth_sample(spec, seed, int(sid))
    tasks = ["agreement"]
    states = np.where(labels, LabelState.POS, LabelState.NEG)[:, None].astype(np.int64)
    if spec.multitask:
        tasks.append("symbol_a_high")
        high = symbols[:, 0] >= spec.alphabet // 2
        extra = np.where(high, LabelState.POS, LabelState.NEG).astype(np.int64)
        for i, sid in enumerate(ids):
            u = rngmod.stream(seed, "synth", int(sid), 1).random(2)
            if u[0] < spec.unknown_rate:
                states[i, 0] = LabelState.UNKNOWN
            if u[1] < spec.uncertain_rate:
                extra[i] = LabelState.UNC
            elif u[1] < spec.uncertain_rate + spec.unknown_rate:
                extra[i] = LabelState.UNKNOWN
        states = np.concatenate([states, extra[:, None]], axis=1)
    folds = np.full(spec.n, spec.fold, dtype=np.int64)
    return DatasetContainer(views, states, tasks, ids, folds), SynthTruth(symbols, positions)


def decode_symbols(views: np.ndarray, truth: SynthTruth, spec: SynthTaskSpec) -> np.ndarray:
    """Ground-truth-guided decoder: mean intensity inside each known marker box, (N, 2)."""
    n = len(views)
    out = np.zeros((n, 2))
    m = spec.marker_size
    for i in range(n):
        for v in range(2):
            r, c = truth.positions[i, v]
            out[i, v] = views[i, v, 0, r : r + m, c : c + m].mean()
    return out


def agreement_oracle_scores(views: np.ndarray, truth: SynthTruth, spec: SynthTaskSpec) -> np.ndarray:
    """Higher when the decoded marker intensities of the two views are closer."""
    decoded = decode_symbols(views, truth, spec)
    return -np.abs(decoded[:, 0] - decoded[:, 1])


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def normalize_foreground(image: np.ndarray) -> np.ndarray:
    """Affine map giving the nonzero pixels mean 0 and std 1; zeros follow the same map."""
    image = np.asarray(image, dtype=np.float64)
    fg = image[image != 0]
    if fg.size < 2:
        raise DegenerateInputError(f"need at least 2 nonzero pixels, got {fg.size}")
    mu, sd = fg.mean(), fg.std()
    if sd == 0:
        raise DegenerateInputError("foreground is constant")
    return (image - mu) / sd


def crop_threshold(image: np.ndarray, window: tuple[int, int], threshold: float) -> np.ndarray:
    """Fixed-size crop placed to contain the most above-threshold pixels.

    Among equally good placements the one whose centre is closest to the
    centroid of the above-threshold pixels wins; remaining ties go to the
    smallest row, then column.
    """
    image = np.asarray(image)
    return _crop(image, crop_position(image, window, threshold), window)


def _crop(image, pos, window):
    r, c = pos
    return image[..., r : r + window[0], c : c + window[1]]


def crop_position(image: np.ndarray, window: tuple[int, int], threshold: float) -> tuple[int, int]:
    h, w = image.shape[-2:]
    wh, ww = window
    if wh > h or ww > w or wh < 1 or ww < 1:
        raise ConfigError(f"crop window {window} exceeds image {h}x{w}")
    mask = (image > threshold).astype(np.int64)
    if mask.ndim > 2:
        mask = mask.reshape(-1, h, w).max(axis=0)
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = mask.cumsum(0).cumsum(1)
    mass = integral[wh:, ww:] - integral[:-wh, ww:] - integral[wh:, :-ww] + integral[:-wh, :-ww]
    best = mass.max()
    if best == 0:
        return 0, 0
    rows, cols = np.nonzero(mask)
    cy, cx = rows.mean(), cols.mean()
    cand_r, cand_c = np.nonzero(mass == best)
    dist = (cand_r + (wh - 1) / 2 - cy) ** 2 + (cand_c + (ww - 1) / 2 - cx) ** 2
    # lexsort: last key is primary
    order = np.lexsort((cand_c, cand_r, dist))
    return int(cand_r[order[0]]), int(cand_c[order[0]])


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentParams:
    """Sampling ranges for :func:`augment`."""

    flip_p: float = 0.5
    max_rotation_deg: float = 15.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    max_shift: float = 0.1
    elastic_sigma: float = 4.0
    elastic_alpha: float = 8.0


@dataclass
class Transform:
    """One concrete draw of the augmentation parameters."""

    flip: bool = False
    rotation_deg: float = 0.0
    scale: float = 1.0
    shift: tuple[float, float] = (0.0, 0.0)  # fraction of (height, width)
    displacement: np.ndarray | None = field(default=None, repr=False)  # (2, H, W) pixels


def sample_transform(shape: tuple[int, int], params: AugmentParams, rng: np.random.Generator) -> Transform:
    h, w = shape
    flip = bool(rng.random() < params.flip_p)
    theta = float(rng.uniform(-params.max_rotation_deg, params.max_rotation_deg))
    scale = float(rng.uniform(*params.scale_range))
    shift = tuple(float(s) for s in rng.uniform(-params.max_shift, params.max_shift, size=2))
    disp = None
    if params.elastic_alpha > 0:
        field_ = rng.uniform(-1.0, 1.0, size=(2, h, w))
        disp = np.stack([ndimage.gaussian_filter(f, params.elastic_sigma, mode="constant") for f in field_])
        disp *= params.elastic_alpha
    return Transform(flip, theta, scale, shift, disp)


def apply_transform(image: np.ndarray, t: Transform) -> np.ndarray:
    """Flip, then rotate/scale/translate about the centre (bilinear, zero fill), then warp elastically.

    ``image`` is (H, W) or (C, H, W); every channel gets the same transform.
    """
    image = np.asarray(image)
    if image.ndim == 3:
        return np.stack([apply_transform(ch, t) for ch in image])
    out = image[:, ::-1] if t.flip else image
    h, w = out.shape
    identity_affine = t.rotation_deg == 0.0 and t.scale == 1.0 and t.shift == (0.0, 0.0)
    if identity_affine and t.displacement is None:
        return np.array(out, dtype=image.dtype)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    if t.displacement is not None:
        # output pixel p samples the affine-warped image at p + displacement
        yy = yy + t.displacement[0]
        xx = xx + t.displacement[1]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    ang = np.deg2rad(t.rotation_deg)
    cos, sin = np.cos(ang), np.sin(ang)
    dy, dx = yy - cy - t.shift[0] * h, xx - cx - t.shift[1] * w
    src_y = (cos * dy + sin * dx) / t.scale + cy
    src_x = (-sin * dy + cos * dx) / t.scale + cx
    warped = ndimage.map_coordinates(np.asarray(out, dtype=np.float64), [src_y, src_x], order=1, mode="constant", cval=0.0)
    return warped.astype(image.dtype)


def augment(image: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    return apply_transform(image, sample_transform(np.shape(image)[-2:], params, rng))


# ---------------------------------------------------------------------------
# container I/O
# ---------------------------------------------------------------------------


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".csv")


def _manifest_text(c: DatasetContainer) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for i in range(len(c)):
        for t, task in enumerate(c.tasks):
            writer.writerow([int(c.ids[i]), task, STATE_NAMES[LabelState(int(c.states[i, t]))], int(c.folds[i])])
    return buf.getvalue()


def write_container(path, container: DatasetContainer) -> None:
    path = Path(path)
    views = np.ascontiguousarray(container.views, dtype="<f4")
    n, v, ch, h, w = views.shape if views.ndim == 5 else (0, 2, *container.view_shape)
    header = _HEADER.pack(MAGIC, VERSION, 0, n, v, ch, h, w, DTYPE_TAG)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(views.tobytes())
        with open(manifest_path(path), "w", newline="") as fh:
            fh.write(_manifest_text(container))
    except OSError as exc:
        raise OSError(f"cannot write dataset container {path}: {exc}") from exc


def read_container(path) -> DatasetContainer:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, _, n, v, ch, h, w, tag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if tag != DTYPE_TAG:
        raise FormatError(f"{path}: unsupported dtype tag {tag!r}")
    expected = n * v * ch * h * w * 4
    payload = raw[_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    views = np.frombuffer(payload, dtype="<f4").reshape(n, v, ch, h, w).astype(np.float32)
    ids, tasks, states, folds = _read_manifest(manifest_path(path), n)
    return DatasetContainer(views, states, tasks, ids, folds)


def _read_manifest(path: Path, count: int):
    if not path.exists():
        raise FormatError(f"missing manifest {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != MANIFEST_COLUMNS:
        raise FormatError(f"{path}: manifest header must be {','.join(MANIFEST_COLUMNS)}")
    rows = rows[1:]
    tasks: list[str] = []
    for r in rows:
        if len(r) != 4:
            raise FormatError(f"{path}: malformed row {r}")
        if r[1] not in tasks:
            tasks.append(r[1])
    if count == 0:
        if rows:
            raise FormatError(f"{path}: rows present for an empty container")
        return np.zeros(0, np.int64), ["agreement"], np.zeros((0, 1), np.int64), np.zeros(0, np.int64)
    if len(rows) != count * len(tasks):
        raise FormatError(f"{path}: {len(rows)} rows for {count} samples x {len(tasks)} tasks")
    ids = np.zeros(count, dtype=np.int64)
    folds = np.zeros(count, dtype=np.int64)
    states = np.zeros((count, len(tasks)), dtype=np.int64)
    try:
        for k, (sid, task, state, fold) in enumerate(rows):
            i, t = divmod(k, len(tasks))
            if tasks[t] != task:
                raise FormatError(f"{path}: task order broken at row {k + 2}")
            ids[i], folds[i] = int(sid), int(fold)
            states[i, t] = STATE_BY_NAME[state]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad manifest value ({exc})") from exc
    return ids, tasks, states, folds


def synth_spec_dict(spec: SynthTaskSpec) -> dict:
    return asdict(spec)


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse class frequency of a binary label vector, normalized to mean 1: [w_neg, w_pos]."""
    labels = np.asarray(labels)
    counts = np.array([(labels == 0).sum(), (labels == 1).sum()], dtype=np.float64)
    if np.any(counts == 0):
        return np.ones(2)
    inv = 1.0 / counts
    return inv / inv.mean()

