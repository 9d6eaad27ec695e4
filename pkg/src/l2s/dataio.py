"""Bit-exact file formats and the planted synthetic dataset generator.

All files start with an ASCII header line ("L2S1", a kind tag, dims)
followed by little-endian float64 payloads, row-major, so they load
identically on any platform. Ground-truth label sets are never stored;
they are recomputed from (layer, contexts, k) on demand.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .screen import ScreeningModel
from .softmax import SoftmaxLayer, label_contexts
from .tensor import as_matrix, as_vector, gumbel_sample

MAGIC = "L2S1"
LAYER_VERSION = "v1"
MODEL_VERSION = "v1"

_KINDS = ("matrix", "vector", "layer", "model")


class FormatError(ValueError):
    """A file does not match the expected on-disk format."""


def _write_array(f, arr: np.ndarray, kind: str) -> None:
    dims = " ".join(str(d) for d in arr.shape)
    f.write(f"{MAGIC} {kind} {dims}\n".encode("ascii"))
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_header(f, path) -> list[str]:
    offset = f.tell()
    line = f.readline()
    if not line.endswith(b"\n"):
        raise FormatError(f"{path}: header not newline-terminated at byte {offset}")
    try:
        fields = line[:-1].decode("ascii").split(" ")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: non-ASCII header at byte {offset}") from exc
    if not fields or fields[0] != MAGIC:
        raise FormatError(f"{path}: bad magic at byte {offset} (expected {MAGIC!r})")
    if len(fields) < 2 or fields[1] not in _KINDS:
        raise FormatError(f"{path}: unknown kind at byte {offset}: {line!r}")
    return fields[1:]


def _read_array(f, kind: str, path) -> np.ndarray:
    offset = f.tell()
    fields = _read_header(f, path)
    if fields[0] != kind:
        raise FormatError(
            f"{path}: expected kind {kind!r} at byte {offset}, got {fields[0]!r}"
        )
    dims_txt = fields[1:]
    want = 1 if kind == "vector" else 2
    if len(dims_txt) != want:
        raise FormatError(
            f"{path}: {kind} header at byte {offset} needs {want} dims, "
            f"got {len(dims_txt)}"
        )
    try:
        dims = [int(d) for d in dims_txt]
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer dims at byte {offset}") from exc
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: non-positive dims at byte {offset}")
    payload_at = f.tell()
    nbytes = 8 * int(np.prod(dims))
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise FormatError(
            f"{path}: payload at byte {payload_at} expected {nbytes} bytes, "
            f"got {len(data)}"
        )
    return np.frombuffer(data, dtype="<f8").reshape(dims).astype(np.float64)


def _expect_eof(f, path) -> None:
    at = f.tell()
    if f.read(1):
        raise FormatError(f"{path}: trailing data at byte {at}")


def save_tensor(path, arr) -> None:
    """Write a 1-D or 2-D float64 array; the kind tag follows the rank."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        kind = "vector"
    elif arr.ndim == 2:
        kind = "matrix"
    else:
        raise ValueError(f"only 1-D or 2-D tensors supported, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("refusing to write an empty tensor")
    with open(path, "wb") as f:
        _write_array(f, arr, kind)


def load_tensor(path, kind: str) -> np.ndarray:
    """Read back a tensor of the expected kind; round-trips bit-exactly."""
    if kind not in ("matrix", "vector"):
        raise ValueError(f"kind must be 'matrix' or 'vector', got {kind!r}")
    with open(path, "rb") as f:
        arr = _read_array(f, kind, path)
        _expect_eof(f, path)
    return as_matrix(arr, str(path)) if kind == "matrix" else as_vector(arr, str(path))


def save_layer(path, layer: SoftmaxLayer) -> None:
    with open(path, "wb") as f:
        f.write(
            f"{MAGIC} layer {LAYER_VERSION} {layer.vocab_size} {layer.dim}\n".encode("ascii")
        )
        _write_array(f, layer.weights, "matrix")
        _write_array(f, layer.bias, "vector")


def load_layer(path) -> SoftmaxLayer:
    with open(path, "rb") as f:
        fields = _read_header(f, path)
        if fields[0] != "layer":
            raise FormatError(f"{path}: expected a layer file, got kind {fields[0]!r}")
        if len(fields) != 4:
            raise FormatError(f"{path}: malformed layer header {fields!r}")
        if fields[1] != LAYER_VERSION:
            raise FormatError(
                f"{path}: layer version {fields[1]!r} unsupported "
                f"(expected {LAYER_VERSION!r})"
            )
        vocab, dim = int(fields[2]), int(fields[3])
        weights = _read_array(f, "matrix", path)
        bias = _read_array(f, "vector", path)
        _expect_eof(f, path)
    if weights.shape != (vocab, dim) or bias.shape != (vocab,):
        raise FormatError(f"{path}: payload shapes disagree with layer header")
    return SoftmaxLayer(weights=weights, bias=bias)


def save_model(path, model: ScreeningModel) -> None:
    """Model file: header, weight tensor, r length-prefixed sorted id lists."""
    with open(path, "wb") as f:
        f.write(
            f"{MAGIC} model {MODEL_VERSION} {model.r} {model.vocab_size} "
            f"{model.dim} {model.budget!r}\n".encode("ascii")
        )
        _write_array(f, model.cluster_weights, "matrix")
        for idx in model.candidate_lists:
            f.write(np.uint64(idx.shape[0]).tobytes())
            f.write(idx.astype("<u8").tobytes())


def load_model(path) -> ScreeningModel:
    with open(path, "rb") as f:
        fields = _read_header(f, path)
        if fields[0] != "model":
            raise FormatError(f"{path}: expected a model file, got kind {fields[0]!r}")
        if len(fields) != 6:
            raise FormatError(f"{path}: malformed model header {fields!r}")
        if fields[1] != MODEL_VERSION:
            raise FormatError(
                f"{path}: model version {fields[1]!r} unsupported "
                f"(expected {MODEL_VERSION!r})"
            )
        r, vocab, dim = int(fields[2]), int(fields[3]), int(fields[4])
        budget = float(fields[5])
        weights = _read_array(f, "matrix", path)
        if weights.shape != (r, dim):
            raise FormatError(f"{path}: weight shape disagrees with model header")
        masks = np.zeros((r, vocab), dtype=bool)
        for t in range(r):
            at = f.tell()
            raw = f.read(8)
            if len(raw) != 8:
                raise FormatError(f"{path}: truncated list length at byte {at}")
            count = int(np.frombuffer(raw, dtype="<u8")[0])
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise FormatError(
                    f"{path}: candidate list at byte {at} expected "
                    f"{8 * count} bytes, got {len(raw)}"
                )
            ids = np.frombuffer(raw, dtype="<u8").astype(np.int64)
            if count and (ids.max() >= vocab or np.any(np.diff(ids) <= 0)):
                raise FormatError(
                    f"{path}: candidate list {t} not sorted unique ids below {vocab}"
                )
            masks[t, ids] = True
        _expect_eof(f, path)
    return ScreeningModel(cluster_weights=weights, candidate_masks=masks, budget=budget)


@dataclass
class SynthSpec:
    """Planted-structure synthetic data: bundles of contexts whose exact
    top-k labels live inside a small designated label subset."""

    vocab_size: int = 10000
    dim: int = 64
    n_contexts: int = 20000
    r_true: int = 10
    subset_size: int = 50
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.subset_size > self.vocab_size:
            raise ValueError("subset_size cannot exceed vocab_size")
        if self.r_true > self.n_contexts:
            raise ValueError("r_true cannot exceed n_contexts")
        if self.r_true * self.subset_size > self.vocab_size:
            raise ValueError("planted subsets do not fit in the vocabulary")
        if min(self.vocab_size, self.dim, self.n_contexts, self.r_true, self.subset_size) < 1:
            raise ValueError("all sizes must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")


# Scales for the planted geometry: bundle centroids dominate their
# subset's weight rows; everything else is low-amplitude noise.
_PLANTED_GAIN = 1.0
_WEIGHT_NOISE = 0.3
_BIAS_NOISE = 0.01


def generate_synthetic(
    spec: SynthSpec,
    k: int = 5,
    containment: float = 0.95,
    max_attempts: int = 10,
) -> tuple[SoftmaxLayer, np.ndarray, dict]:
    """Sample a softmax layer plus context set with planted cluster structure.

    Each context is a noisy copy of one of r_true unit centroid
    directions, and the weight rows of that bundle's label subset are
    correlated with the same centroid, so exact top-k labels land inside
    the subset. The construction is verified against the exact oracle
    and re-sampled (fresh sub-seed) up to max_attempts times.

    Returns (layer, contexts, meta); meta records the bundle of every
    context, the planted subsets, centroids, and the verified
    containment rate.
    """
    if k > spec.subset_size:
        raise ValueError(f"k={k} exceeds subset_size={spec.subset_size}")
    children = np.random.SeedSequence(spec.seed).spawn(max_attempts)
    rate = 0.0
    for attempt, child in enumerate(children, start=1):
        rng = np.random.Generator(np.random.PCG64(child))
        centroids = rng.standard_normal((spec.r_true, spec.dim))
        centroids /= np.linalg.norm(centroids, axis=1)[:, None]
        bundle = rng.integers(0, spec.r_true, spec.n_contexts)
        contexts = centroids[bundle] + spec.noise_sigma * rng.standard_normal(
            (spec.n_contexts, spec.dim)
        )

        perm = rng.permutation(spec.vocab_size)
        subsets = np.sort(
            perm[: spec.r_true * spec.subset_size].reshape(spec.r_true, spec.subset_size),
            axis=1,
        )
        weights = _WEIGHT_NOISE * rng.standard_normal(
            (spec.vocab_size, spec.dim)
        ) / np.sqrt(spec.dim)
        for j in range(spec.r_true):
            weights[subsets[j]] += _PLANTED_GAIN * centroids[j]
        bias = _BIAS_NOISE * rng.standard_normal(spec.vocab_size)
        layer = SoftmaxLayer(weights=weights, bias=bias)

        label_bundle = np.full(spec.vocab_size, -1, dtype=np.int64)
        for j in range(spec.r_true):
            label_bundle[subsets[j]] = j
        top = label_contexts(layer, contexts, k)
        inside = (label_bundle[top] == bundle[:, None]).all(axis=1)
        rate = float(inside.mean())
        if rate >= containment:
            meta = {
                "spec": asdict(spec),
                "k": k,
                "containment": rate,
                "attempt": attempt,
                "bundle": bundle,
                "subsets": subsets,
                "centroids": centroids,
            }
            return layer, contexts, meta
    raise RuntimeError(
        f"planted containment {rate:.3f} below {containment} after "
        f"{max_attempts} attempts; lower noise_sigma"
    )


def sample_targets(layer: SoftmaxLayer, contexts: np.ndarray, seed: int) -> np.ndarray:
    """Draw one target token per context from the exact softmax distribution.

    Sampling uses the perturb-and-argmax identity, so no explicit
    normalization is needed.
    """
    contexts = as_matrix(contexts, "contexts")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = contexts.shape[0]
    vocab = layer.vocab_size
    block = max(1, 2_000_000 // vocab)
    out = np.empty(n, dtype=np.int64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        x = contexts[start:stop] @ layer.weights.T + layer.bias
        g = gumbel_sample(rng, (stop - start) * vocab).reshape(stop - start, vocab)
        out[start:stop] = np.argmax(x + g, axis=1)
    return out
