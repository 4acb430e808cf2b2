"""Embedding providers: file-backed stores and seeded, untrained built-in networks.

Every provider can carry a :class:`LinearHead`. The conv stack also exposes
its kernels through ``parameters()`` and their gradients through
``backward()``, so it can be trained end to end; the other bodies are fixed.
"""

import hashlib
import logging
import struct
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from invarlab.errors import (
    CapabilityError,
    ConfigError,
    DuplicateId,
    MissingEmbedding,
    NumericError,
    ParseError,
    ShapeError,
)
from invarlab.transforms import Transform, apply_transform

logger = logging.getLogger("invarlab.embedders")

DEFAULT_INPUT_SIZE = 64

_BINARY_MAGIC = b"IVEB"


def image_digest(img: np.ndarray) -> str:
    """Content hash of an image, used to de-duplicate embedding work."""
    arr = np.ascontiguousarray(img, dtype=np.float64)
    return hashlib.sha1(arr.tobytes() + str(arr.shape).encode()).hexdigest()


class LinearHead:
    """Softmax classifier ``logits = W e + b`` on top of an embedding."""

    def __init__(self, n_classes: int, dim: int):
        if n_classes < 2:
            raise ValueError(f"A classifier head needs at least 2 classes, got {n_classes}")
        self.n_classes = n_classes
        self.dim = dim
        self.weight = np.zeros((n_classes, dim))
        self.bias = np.zeros(n_classes)

    def logits(self, e: np.ndarray) -> np.ndarray:
        return self.weight @ e + self.bias

    @staticmethod
    def softmax(z: np.ndarray) -> np.ndarray:
        z = z - z.max(axis=-1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=-1, keepdims=True)

    def fit(
        self,
        embeddings: np.ndarray,
        labels: Sequence[int],
        epochs: int = 200,
        lr: float = 1.0,
        l2: float = 0.0,
    ) -> list[float]:
        """Full-batch gradient descent on mean cross-entropy.

        The step is ``lr`` divided by the mean squared embedding norm, so the
        same ``lr`` works across providers of very different dimension.
        Returns the loss per epoch.
        """
        x = np.asarray(embeddings, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[1] != self.dim or len(x) != len(y):
            raise ShapeError(f"Expected ({len(y)}, {self.dim}) embeddings, got {x.shape}")
        onehot = np.eye(self.n_classes)[y]
        step = lr / max(float(np.mean(np.sum(x * x, axis=1))) + 1.0, 1e-12)
        history = []
        for _ in range(epochs):
            p = self.softmax(x @ self.weight.T + self.bias)
            loss = -np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None)))
            if not np.isfinite(loss):
                raise NumericError("Head fitting produced a non-finite loss")
            history.append(float(loss))
            delta = (p - onehot) / len(y)
            self.weight -= step * (delta.T @ x + l2 * self.weight)
            self.bias -= step * delta.sum(axis=0)
        return history

    def state(self) -> dict[str, Any]:
        return {"weight": self.weight.tolist(), "bias": self.bias.tolist()}

    def load_state(self, state: dict[str, Any]) -> None:
        weight = np.asarray(state["weight"], dtype=np.float64)
        bias = np.asarray(state["bias"], dtype=np.float64)
        if weight.shape != self.weight.shape or bias.shape != self.bias.shape:
            raise ShapeError(f"Head state {weight.shape} does not fit a {self.weight.shape} head")
        self.weight = weight
        self.bias = bias


class EmbeddingProvider:
    """Base provider.

    Subclasses implement :meth:`_features`; ``input_size`` is ``None`` when
    any image size is accepted.
    """

    variant = "base"
    deterministic = True
    input_size: int | None = None

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.head: LinearHead | None = None

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def has_classifier(self) -> bool:
        return self.head is not None

    def _check_input(self, img: np.ndarray) -> None:
        if img.ndim != 3 or img.shape[2] != 3:
            raise ShapeError(f"Expected an (H, W, 3) image, got shape {img.shape}")
        if self.input_size is not None and img.shape[:2] != (self.input_size, self.input_size):
            raise ShapeError(
                f"{self.variant} expects {self.input_size}x{self.input_size} input, "
                f"got {img.shape[1]}x{img.shape[0]}"
            )

    def _features(self, img: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def embed(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        self._check_input(img)
        e = self._features(img)
        if not np.all(np.isfinite(e)):
            raise NumericError(f"{self.variant} produced a non-finite embedding")
        return e

    def embed_sample(self, sample_id: str, img: np.ndarray | None, transform: Transform | None = None) -> np.ndarray:
        if img is None:
            raise CapabilityError(f"{self.variant} needs image data for sample {sample_id!r}")
        if transform is not None:
            img = apply_transform(transform, img)
        return self.embed(img)

    def vjp(self, img: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Gradient of ``<grad, embed(img)>`` with respect to the image."""
        raise CapabilityError(f"{self.variant} does not provide input gradients")

    def parameters(self) -> list[np.ndarray]:
        """Trainable body arrays, updated in place by training. Empty for fixed bodies."""
        return []

    def backward(self, img: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Gradients of ``<grad, embed(img)>`` with respect to the image and each of :meth:`parameters`."""
        return self.vjp(img, grad), []

    def body_state(self) -> dict[str, Any]:
        return {}

    def load_body_state(self, state: dict[str, Any]) -> None:
        if state:
            raise ShapeError(f"{self.variant} has no trainable body to restore")

    def attach_head(self, n_classes: int) -> LinearHead:
        self.head = LinearHead(n_classes, self.dim)
        return self.head

    def classify(self, img: np.ndarray) -> np.ndarray:
        if self.head is None:
            raise CapabilityError(f"{self.variant} has no classifier head")
        return self.head.logits(self.embed(img))

    def metadata(self) -> dict[str, Any]:
        try:
            dim = self.dim
        except CapabilityError:
            dim = None
        return {
            "variant": self.variant,
            "seed": self.seed,
            "dim": dim,
            "deterministic": self.deterministic,
            "input_size": self.input_size,
            "classifier_head": self.head.n_classes if self.head else None,
        }


# --- conv stack -----------------------------------------------------------


def _shift(x: np.ndarray, dy: int, dx: int, circular: bool) -> np.ndarray:
    """``out[y, x] = in[y - dy, x - dx]``; zero outside when not circular."""
    if circular:
        return np.roll(x, shift=(dy, dx), axis=(0, 1))
    h, w = x.shape[:2]
    out = np.zeros_like(x)
    ys_out = slice(max(dy, 0), h + min(dy, 0))
    ys_in = slice(max(-dy, 0), h + min(-dy, 0))
    xs_out = slice(max(dx, 0), w + min(dx, 0))
    xs_in = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys_out, xs_out] = x[ys_in, xs_in]
    return out


class SeededConvEmbedder(EmbeddingProvider):
    """Stride-1 3x3 convolutions with ReLU, He-normal seeded weights, no bias.

    ``padding="circular"`` makes every layer commute with cyclic shifts;
    ``pooling="gap"`` averages the last feature map over positions,
    ``pooling="none"`` flattens it row-major as ``(H, W, C)``.
    """

    variant = "conv"

    def __init__(
        self,
        seed: int = 0,
        channels: Sequence[int] = (8, 4),
        padding: str = "circular",
        pooling: str = "none",
        input_size: int = DEFAULT_INPUT_SIZE,
    ):
        super().__init__(seed)
        if padding not in ("circular", "zero"):
            raise ValueError(f"padding must be 'circular' or 'zero', got {padding!r}")
        if pooling not in ("none", "gap"):
            raise ValueError(f"pooling must be 'none' or 'gap', got {pooling!r}")
        if not channels:
            raise ValueError("At least one conv layer is required")
        self.channels = tuple(int(c) for c in channels)
        self.padding = padding
        self.pooling = pooling
        self.input_size = input_size
        if pooling == "gap":
            self.variant = "conv-gap"
        rng = np.random.default_rng(seed)
        self.kernels = []
        c_in = 3
        for c_out in self.channels:
            std = np.sqrt(2.0 / (9 * c_in))
            self.kernels.append(rng.normal(0.0, std, size=(3, 3, c_in, c_out)))
            c_in = c_out

    @property
    def dim(self) -> int:
        if self.pooling == "gap":
            return self.channels[-1]
        return self.input_size * self.input_size * self.channels[-1]

    def _conv(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        circular = self.padding == "circular"
        out = np.zeros(x.shape[:2] + (k.shape[3],))
        for i in range(3):
            for j in range(3):
                out += _shift(x, 1 - i, 1 - j, circular) @ k[i, j]
        return out

    def _conv_transpose(self, g: np.ndarray, k: np.ndarray) -> np.ndarray:
        circular = self.padding == "circular"
        out = np.zeros(g.shape[:2] + (k.shape[2],))
        for i in range(3):
            for j in range(3):
                out += _shift(g @ k[i, j].T, i - 1, j - 1, circular)
        return out

    def _forward(self, img: np.ndarray) -> list[np.ndarray]:
        """Pre-activations of every layer."""
        pre = []
        a = img
        for k in self.kernels:
            z = self._conv(a, k)
            pre.append(z)
            a = np.maximum(z, 0.0)
        return pre

    def _kernel_grad(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        circular = self.padding == "circular"
        c_in, c_out = x.shape[2], g.shape[2]
        flat_g = g.reshape(-1, c_out)
        out = np.empty((3, 3, c_in, c_out))
        for i in range(3):
            for j in range(3):
                out[i, j] = _shift(x, 1 - i, 1 - j, circular).reshape(-1, c_in).T @ flat_g
        return out

    def feature_map(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        self._check_input(img)
        return np.maximum(self._forward(img)[-1], 0.0)

    def _features(self, img: np.ndarray) -> np.ndarray:
        fmap = np.maximum(self._forward(img)[-1], 0.0)
        if self.pooling == "gap":
            return fmap.mean(axis=(0, 1))
        return fmap.reshape(-1)

    def _backprop(self, img: np.ndarray, grad: np.ndarray, kernels: bool) -> tuple[np.ndarray, list[np.ndarray]]:
        img = np.asarray(img, dtype=np.float64)
        self._check_input(img)
        pre = self._forward(img)
        h, w = img.shape[:2]
        if self.pooling == "gap":
            g = np.broadcast_to(grad / (h * w), (h, w, self.channels[-1])).copy()
        else:
            g = np.asarray(grad, dtype=np.float64).reshape(h, w, self.channels[-1])
        inputs = [img] + [np.maximum(z, 0.0) for z in pre[:-1]]
        grads: list[np.ndarray] = [np.empty(0)] * len(self.kernels)
        for layer in reversed(range(len(self.kernels))):
            g = g * (pre[layer] > 0)
            if kernels:
                grads[layer] = self._kernel_grad(inputs[layer], g)
            g = self._conv_transpose(g, self.kernels[layer])
        return g, grads if kernels else []

    def vjp(self, img: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return self._backprop(img, grad, kernels=False)[0]

    def parameters(self) -> list[np.ndarray]:
        return self.kernels

    def backward(self, img: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        return self._backprop(img, grad, kernels=True)

    def body_state(self) -> dict[str, Any]:
        return {"kernels": [k.tolist() for k in self.kernels]}

    def load_body_state(self, state: dict[str, Any]) -> None:
        kernels = [np.asarray(k, dtype=np.float64) for k in state.get("kernels", [])]
        if [k.shape for k in kernels] != [k.shape for k in self.kernels]:
            raise ShapeError(f"Kernel shapes {[k.shape for k in kernels]} do not fit {self.variant} "
                             f"with channels {list(self.channels)}")
        for target, k in zip(self.kernels, kernels):
            target[...] = k

    def metadata(self) -> dict[str, Any]:
        data = super().metadata()
        data.update({"channels": list(self.channels), "padding": self.padding, "pooling": self.pooling})
        return data


# --- patch pool -----------------------------------------------------------


class SeededPatchPoolEmbedder(EmbeddingProvider):
    """Non-overlapping P x P patches, shared linear map and ReLU, mean over patches."""

    variant = "patchpool"

    def __init__(self, seed: int = 0, patch: int = 8, dim: int = 32, input_size: int = DEFAULT_INPUT_SIZE):
        super().__init__(seed)
        if input_size % patch:
            raise ValueError(f"input_size {input_size} is not a multiple of patch {patch}")
        self.patch = patch
        self.out_dim = dim
        self.input_size = input_size
        rng = np.random.default_rng(seed)
        fan_in = patch * patch * 3
        self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, dim))
        self.bias = rng.normal(0.0, 0.1, size=dim)

    @property
    def dim(self) -> int:
        return self.out_dim

    def _patches(self, img: np.ndarray) -> np.ndarray:
        n = self.input_size // self.patch
        p = self.patch
        return img.reshape(n, p, n, p, 3).transpose(0, 2, 1, 3, 4).reshape(n * n, p * p * 3)

    def _features(self, img: np.ndarray) -> np.ndarray:
        # canonical patch order: the pooled sum is bitwise independent of patch positions
        patches = self._patches(img)
        patches = patches[np.lexsort(patches.T[::-1])]
        return np.maximum(patches @ self.weight + self.bias, 0.0).mean(axis=0)

    def vjp(self, img: np.ndarray, grad: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        self._check_input(img)
        patches = self._patches(img)
        active = (patches @ self.weight + self.bias) > 0
        g = (active * (grad / len(patches))) @ self.weight.T
        n, p = self.input_size // self.patch, self.patch
        return g.reshape(n, n, p, p, 3).transpose(0, 2, 1, 3, 4).reshape(self.input_size, self.input_size, 3)

    def metadata(self) -> dict[str, Any]:
        data = super().metadata()
        data["patch"] = self.patch
        return data


# --- position-free and reference providers --------------------------------


class HistogramEmbedder(EmbeddingProvider):
    """Per-channel intensity histograms, normalized by pixel count."""

    variant = "histogram"

    def __init__(self, bins: int = 32, seed: int = 0):
        super().__init__(seed)
        self.bins = bins

    @property
    def dim(self) -> int:
        return 3 * self.bins

    def _features(self, img: np.ndarray) -> np.ndarray:
        idx = np.clip(np.floor(img * self.bins).astype(np.int64), 0, self.bins - 1)
        n = img.shape[0] * img.shape[1]
        counts = [np.bincount(idx[:, :, c].ravel(), minlength=self.bins) for c in range(3)]
        return np.concatenate(counts).astype(np.float64) / n


class NoiseEmbedder(EmbeddingProvider):
    """Random vectors keyed by image content; carries no information about the input."""

    variant = "noise"
    deterministic = False

    def __init__(self, seed: int = 0, dim: int = 64):
        super().__init__(seed)
        self.out_dim = dim

    @property
    def dim(self) -> int:
        return self.out_dim

    def _features(self, img: np.ndarray) -> np.ndarray:
        key = int(image_digest(img)[:15], 16)
        return np.random.default_rng([self.seed, key]).normal(size=self.out_dim)


class PixelEmbedder(EmbeddingProvider):
    """f(x) = x flattened."""

    variant = "pixel"

    def __init__(self, input_size: int | None = None, seed: int = 0):
        super().__init__(seed)
        self.input_size = input_size
        self._dim = None if input_size is None else input_size * input_size * 3

    @property
    def dim(self) -> int:
        if self._dim is None:
            raise CapabilityError("pixel provider without a fixed input_size has no static dim")
        return self._dim

    def _features(self, img: np.ndarray) -> np.ndarray:
        return img.reshape(-1).copy()

    def vjp(self, img: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return np.asarray(grad, dtype=np.float64).reshape(np.shape(img))


# --- file store -----------------------------------------------------------


def transform_key(sample_id: str, transform: Transform | None) -> str:
    if transform is None or transform.is_identity:
        return sample_id
    return f"{sample_id}@{transform}"


class FileStore(EmbeddingProvider):
    """Embeddings computed elsewhere, looked up by sample id.

    Transformed samples are stored under ``<id>@<transform>``; identity
    transforms resolve to the plain id.
    """

    variant = "file"

    def __init__(self, vectors: dict[str, np.ndarray], dim: int, source: str = "<memory>"):
        super().__init__(seed=0)
        self.vectors = vectors
        self._dim = dim
        self.source = source

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, img: np.ndarray) -> np.ndarray:
        raise CapabilityError("file store embeddings are looked up by sample id, not computed from images")

    def lookup(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise MissingEmbedding(key) from None

    def embed_sample(self, sample_id: str, img: np.ndarray | None = None, transform: Transform | None = None) -> np.ndarray:
        return self.lookup(transform_key(sample_id, transform))

    def classify(self, img: np.ndarray) -> np.ndarray:
        raise CapabilityError("file store has no classifier head")

    def metadata(self) -> dict[str, Any]:
        data = super().metadata()
        data.update({"source": self.source, "count": len(self.vectors)})
        return data


def _add_vector(vectors: dict, sample_id: str, values: np.ndarray, offset: int) -> None:
    if sample_id in vectors:
        raise DuplicateId(f"Duplicate id {sample_id!r} at byte offset {offset}")
    if not np.all(np.isfinite(values)):
        raise ParseError(f"Non-finite value for id {sample_id!r}", offset=offset)
    vectors[sample_id] = values


def _parse_text_store(data: bytes, source: str) -> FileStore:
    text = data.decode("utf-8")
    lines = text.splitlines(keepends=True)
    if not lines:
        raise ParseError("Empty embedding store", offset=0)
    header = lines[0].split()
    try:
        fields = dict(item.split("=", 1) for item in header)
        dim, count = int(fields["dim"]), int(fields["count"])
    except (KeyError, ValueError) as e:
        raise ParseError(f"Bad store header {lines[0].strip()!r}; expected 'dim=<d> count=<n>'", offset=0) from e
    vectors: dict[str, np.ndarray] = {}
    offset = len(lines[0].encode("utf-8"))
    for line in lines[1:]:
        row = line.rstrip("\r\n")
        if row:
            if "\t" not in row:
                raise ParseError("Row is missing the id<TAB>values separator", offset=offset)
            sample_id, raw = row.split("\t", 1)
            try:
                values = np.array([float(v) for v in raw.split(",")])
            except ValueError as e:
                raise ParseError(f"Bad value in row for {sample_id!r}: {e}", offset=offset) from e
            if len(values) != dim:
                raise ParseError(f"Row {sample_id!r} has {len(values)} values, header says dim={dim}", offset=offset)
            _add_vector(vectors, sample_id, values, offset)
        offset += len(line.encode("utf-8"))
    if len(vectors) != count:
        raise ParseError(f"Header says count={count} but {len(vectors)} rows were read", offset=offset)
    return FileStore(vectors, dim, source)


def _parse_binary_store(data: bytes, source: str) -> FileStore:
    pos = len(_BINARY_MAGIC)
    if len(data) < pos + 8:
        raise ParseError("Truncated binary store header", offset=len(data))
    dim, count = struct.unpack_from("<II", data, pos)
    pos += 8
    vectors: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = pos
        if len(data) < pos + 2:
            raise ParseError("Truncated id length", offset=pos)
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if len(data) < pos + n + 4 * dim:
            raise ParseError("Truncated row", offset=pos)
        try:
            sample_id = data[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"Id is not UTF-8: {e}", offset=pos) from e
        pos += n
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += 4 * dim
        _add_vector(vectors, sample_id, values, start)
    if pos != len(data):
        raise ParseError(f"{len(data) - pos} trailing bytes after {count} rows", offset=pos)
    return FileStore(vectors, dim, source)


def load_file_store(path: str | Path) -> FileStore:
    """Load a text or binary embedding store (binary files start with ``IVEB``)."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(_BINARY_MAGIC):
        store = _parse_binary_store(data, str(path))
    else:
        try:
            store = _parse_text_store(data, str(path))
        except UnicodeDecodeError as e:
            raise ParseError(f"Store is neither binary nor UTF-8 text: {e}", offset=e.start) from e
    logger.info(f"Loaded {len(store.vectors)} embeddings (dim={store.dim}) from {path}")
    return store


def write_file_store(path: str | Path, vectors: dict[str, np.ndarray], binary: bool = False) -> None:
    path = Path(path)
    items = list(vectors.items())
    dims = {len(v) for _, v in items}
    if len(dims) > 1:
        raise ShapeError(f"Vectors have mixed dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    if binary:
        parts = [_BINARY_MAGIC, struct.pack("<II", dim, len(items))]
        for sample_id, v in items:
            raw = sample_id.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw)
            parts.append(np.asarray(v, dtype="<f4").tobytes())
        path.write_bytes(b"".join(parts))
    else:
        lines = [f"dim={dim} count={len(items)}\n"]
        for sample_id, v in items:
            lines.append(sample_id + "\t" + ",".join(repr(float(x)) for x in v) + "\n")
        path.write_text("".join(lines), encoding="utf-8")
    logger.info(f"Wrote {len(items)} embeddings to {path}")


# --- factory --------------------------------------------------------------

PROVIDER_VARIANTS = ("conv", "conv-gap", "patchpool", "histogram", "noise", "pixel", "file")


def build_provider(config: dict[str, Any]) -> EmbeddingProvider:
    """Construct a provider from a config mapping with a ``variant`` key."""
    options = dict(config)
    variant = options.pop("variant", "conv")
    try:
        if variant in ("conv", "conv-gap"):
            if variant == "conv-gap":
                options.setdefault("pooling", "gap")
            return SeededConvEmbedder(**options)
        if variant == "patchpool":
            return SeededPatchPoolEmbedder(**options)
        if variant == "histogram":
            return HistogramEmbedder(**options)
        if variant == "noise":
            return NoiseEmbedder(**options)
        if variant == "pixel":
            return PixelEmbedder(**options)
        if variant == "file":
            return load_file_store(options["path"])
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"Invalid provider options {config}: {e}", key="provider") from e
    raise ConfigError(f"Unknown provider variant {variant!r}; expected one of {PROVIDER_VARIANTS}", key="provider.variant")


def embed_all(provider: EmbeddingProvider, images: Iterable[np.ndarray]) -> np.ndarray:
    return np.stack([provider.embed(img) for img in images])
