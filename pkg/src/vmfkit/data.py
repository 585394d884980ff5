"""Dataset ingestion: IDX digit images, CSV vectors, pair lists, synthetic vMF data and config files."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .mixture import VmfMixture
from .vmf import VmfComponent, sample

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class ParseError(ConfigError):
    """Malformed input file; the message carries ``path:line`` context."""


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file (3-D images or 1-D labels)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ParseError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise ParseError(f"{path}: unsupported IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise ParseError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array) -> None:
    arr = np.asarray(array, dtype=np.uint8)
    magic = {3: IDX_IMAGES_MAGIC, 1: IDX_LABELS_MAGIC}.get(arr.ndim)
    if magic is None:
        raise DomainError("only 3-D image or 1-D label arrays can be written")
    Path(path).write_bytes(struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes())


def scale_pixels(images) -> np.ndarray:
    """Map bytes 0..255 onto [-1, 1]."""
    return np.asarray(images, dtype=float) / 127.5 - 1.0


def load_idx_dataset(images_path, labels_path=None):
    """Return ``(X, y, (height, width))`` with X flattened and scaled to [-1, 1]."""
    images = read_idx(images_path)
    if images.ndim != 3:
        raise ParseError(f"{images_path}: expected an image file (magic 0x{IDX_IMAGES_MAGIC:08x})")
    x = scale_pixels(images.reshape(images.shape[0], -1))
    y = None
    if labels_path is not None:
        y = read_idx(labels_path)
        if y.ndim != 1:
            raise ParseError(f"{labels_path}: expected a label file (magic 0x{IDX_LABELS_MAGIC:08x})")
        if y.shape[0] != x.shape[0]:
            raise ParseError(f"{labels_path}: {y.shape[0]} labels for {x.shape[0]} images")
        y = y.astype(int)
    return x, y, images.shape[1:]


def parse_vectors_csv(text: str, source: str = "<string>"):
    """Parse ``d=<dim>`` headed CSV; returns ``(X, labels or None)``.

    Each row has ``d`` decimals and optionally a trailing integer label;
    either every row carries a label or none does.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip().startswith("d="):
        raise ParseError(f"{source}:1: missing 'd=<dim>' header")
    try:
        d = int(lines[0].strip()[2:])
    except ValueError:
        raise ParseError(f"{source}:1: bad dimension header {lines[0]!r}") from None
    if d < 1:
        raise ParseError(f"{source}:1: dimension must be positive")
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) not in (d, d + 1):
            raise ParseError(f"{source}:{lineno}: expected {d} or {d + 1} fields, got {len(parts)}")
        try:
            rows.append([float(v) for v in parts[:d]])
            if len(parts) == d + 1:
                labels.append(int(parts[d]))
        except ValueError as exc:
            raise ParseError(f"{source}:{lineno}: {exc}") from None
    if labels and len(labels) != len(rows):
        raise ParseError(f"{source}: label column present on some rows only")
    x = np.array(rows, dtype=float).reshape(len(rows), d)
    return x, (np.array(labels, dtype=int) if labels else None)


def read_vectors_csv(path):
    path = Path(path)
    return parse_vectors_csv(path.read_text(encoding="ascii"), str(path))


def format_vectors_csv(x, labels=None) -> str:
    x = np.asarray(x, dtype=float)
    d = x.shape[1] if x.ndim == 2 else 0
    out = [f"d={d}"]
    for i, row in enumerate(x):
        fields = [repr(float(v)) for v in row]
        if labels is not None:
            fields.append(str(int(labels[i])))
        out.append(",".join(fields))
    return "\n".join(out) + "\n"


def read_pairs_csv(path) -> list[tuple[int, int, bool]]:
    """Pair list with header ``pair_a,pair_b,label`` (label 1 = genuine)."""
    path = Path(path)
    lines = path.read_text(encoding="ascii").splitlines()
    if not lines or [c.strip() for c in lines[0].split(",")][:3] != ["pair_a", "pair_b", "label"]:
        raise ParseError(f"{path}:1: expected header 'pair_a,pair_b,label'")
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            a, b, lab = int(parts[0]), int(parts[1]), int(parts[2])
        except (ValueError, IndexError):
            raise ParseError(f"{path}:{lineno}: malformed pair {line!r}") from None
        if lab not in (0, 1):
            raise ParseError(f"{path}:{lineno}: label must be 0 or 1")
        pairs.append((a, b, bool(lab)))
    return pairs


def synthetic_vmf(mixture: VmfMixture, per_class: int, seed):
    """``per_class`` samples from every component, labelled by component index."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    xs, ys = [], []
    for j, comp in enumerate(mixture.components):
        if per_class > 0:
            xs.append(sample(comp, per_class, rng))
            ys.append(np.full(per_class, j))
    if not xs:
        return np.zeros((0, mixture.dim)), np.zeros(0, dtype=int)
    return np.vstack(xs), np.concatenate(ys)


def random_mixture(n_components: int, dim: int, kappa: float, rng: np.random.Generator) -> VmfMixture:
    """Equal-weight mixture with uniformly random mean directions and a shared kappa."""
    g = rng.standard_normal((n_components, dim))
    mus = g / np.linalg.norm(g, axis=1, keepdims=True)
    return VmfMixture(tuple(VmfComponent(m, kappa) for m in mus), np.full(n_components, 1.0 / n_components))


def parse_config(text: str, source: str = "<string>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(f"{source}:{lineno}: empty key")
        cfg[key] = value
    return cfg


def toy_directional_dataset(seed, n_classes: int = 10, dim: int = 16, kappa: float = 30.0,
                            per_class: int = 700, n_test: int = 2000):
    """Shuffled vMF classes split into ``((x_train, y_train), (x_test, y_test))``.

    Class means are uniform on the sphere; inputs are the unit samples
    themselves, so a network has to learn a feature map before the loss sees them.
    """
    rng = np.random.default_rng(seed)
    x, y = synthetic_vmf(random_mixture(n_classes, dim, kappa, rng), per_class, rng)
    order = rng.permutation(x.shape[0])
    x, y = x[order], y[order]
    if not 0 <= n_test < x.shape[0]:
        raise DomainError(f"test size {n_test} must leave training data (total {x.shape[0]})")
    cut = x.shape[0] - n_test
    return (x[:cut], y[:cut]), (x[cut:], y[cut:])
