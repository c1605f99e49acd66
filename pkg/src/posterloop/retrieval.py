"""Canvas embeddings and exact cosine top-k retrieval over exemplar layouts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, DimensionMismatch, DuplicateIdError, EmptyCorpus, ZeroNorm
from .geometry import Layout, layout_from_dict, layout_to_dict

DEFAULT_K = 5
THUMB = 8
HIST_BINS = 8
BASELINE_DIM = THUMB * THUMB + 3 * HIST_BINS


@dataclass(frozen=True)
class Embedding:
    id: str
    vector: tuple[float, ...]

    def __post_init__(self):
        vec = tuple(float(v) for v in self.vector)
        object.__setattr__(self, "vector", vec)
        if not all(math.isfinite(v) for v in vec):
            raise ValueError(f"embedding {self.id!r} has non-finite entries")

    @property
    def dim(self) -> int:
        return len(self.vector)

    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.vector))


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    image: str | None
    layout: Layout
    embedding: Embedding

    def __post_init__(self):
        if self.embedding.id != self.id:
            raise ValueError(f"embedding id {self.embedding.id!r} != entry id {self.id!r}")


@dataclass(frozen=True)
class RetrievalResult:
    hits: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [h[0] for h in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


class EmbeddingProvider(Protocol):
    dim: int | None

    def embed(self, image, id: str) -> Embedding: ...


# ---------------------------------------------------------------------------
# Baseline provider


def _as_rgb_array(image) -> np.ndarray:
    if isinstance(image, (str, Path)):
        try:
            with Image.open(image) as im:
                im.load()
                image = im.convert("RGB")
        except (OSError, UnidentifiedImageError) as exc:
            raise DecodeError(f"cannot decode image {image}: {exc}") from None
    if isinstance(image, Image.Image):
        arr = np.asarray(image.convert("RGB"))
    else:
        # RasterImage or a raw HxWxC array
        arr = np.asarray(getattr(image, "pixels", image))
        if arr.ndim != 3 or arr.shape[2] < 3:
            raise DecodeError(f"expected an HxWx3/4 pixel array, got shape {arr.shape}")
        arr = arr[:, :, :3]
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DecodeError("image has zero size")
    return arr.astype(np.float64)


def _block_bounds(n: int, blocks: int) -> list[tuple[int, int]]:
    out = []
    for i in range(blocks):
        lo = (i * n) // blocks
        hi = ((i + 1) * n) // blocks
        if hi <= lo:
            lo = min(lo, n - 1)
            hi = lo + 1
        out.append((lo, hi))
    return out


def baseline_vector(image) -> np.ndarray:
    """8x8 mean-pooled luma thumbnail plus an 8-bin histogram per RGB channel."""
    rgb = _as_rgb_array(image)
    h, w, _ = rgb.shape
    gray = (0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]) / 255.0
    thumb = np.empty((THUMB, THUMB))
    for r, (y0, y1) in enumerate(_block_bounds(h, THUMB)):
        for c, (x0, x1) in enumerate(_block_bounds(w, THUMB)):
            thumb[r, c] = gray[y0:y1, x0:x1].mean()
    px = rgb.astype(np.int64)
    hist = []
    for ch in range(3):
        counts = np.bincount((px[:, :, ch] // (256 // HIST_BINS)).ravel(), minlength=HIST_BINS)
        hist.append(counts / float(h * w))
    vec = np.concatenate([thumb.ravel(), *hist])
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not math.isfinite(norm):
        raise ZeroNorm("baseline embedding has zero norm")
    return vec / norm


class BaselineEmbedder:
    """Deterministic image-statistics embedder; needs no model weights."""

    dim = BASELINE_DIM

    def embed(self, image, id: str = "") -> Embedding:
        return Embedding(id, tuple(baseline_vector(image).tolist()))


class PrecomputedEmbedder:
    """Look vectors up by id from an embedding file, optionally falling back."""

    def __init__(self, vectors: dict[str, Embedding], fallback: EmbeddingProvider | None = None):
        self.vectors = vectors
        self.fallback = fallback
        dims = {e.dim for e in vectors.values()}
        self.dim = dims.pop() if len(dims) == 1 else None

    @classmethod
    def from_file(cls, path: str | Path, fallback: EmbeddingProvider | None = None):
        return cls({e.id: e for e in read_embeddings(path)}, fallback)

    def embed(self, image, id: str = "") -> Embedding:
        if id in self.vectors:
            return self.vectors[id]
        if self.fallback is None:
            raise KeyError(f"no precomputed embedding for {id!r}")
        return self.fallback.embed(image, id)


def embed(image, id: str = "") -> Embedding:
    return BaselineEmbedder().embed(image, id)


# ---------------------------------------------------------------------------
# Similarity


def cosine(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension {a.dim} != {b.dim}")
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        raise ZeroNorm("cosine of a zero vector")
    dot = math.fsum(x * y for x, y in zip(a.vector, b.vector))
    return max(-1.0, min(1.0, dot / (na * nb)))


class Index:
    """Immutable exact index; every query is a full linear scan."""

    def __init__(self, entries: Sequence[CorpusEntry]):
        entries = list(entries)
        if not entries:
            raise EmptyCorpus("cannot build an index from zero entries")
        ids = [e.id for e in entries]
        seen: set[str] = set()
        for i in ids:
            if i in seen:
                raise DuplicateIdError(f"duplicate entry id {i!r}")
            seen.add(i)
        dim = entries[0].embedding.dim
        for e in entries:
            if e.embedding.dim != dim:
                raise DimensionMismatch(
                    f"entry {e.id!r} has dimension {e.embedding.dim}, index uses {dim}"
                )
        mat = np.array([e.embedding.vector for e in entries], dtype=np.float64)
        norms = np.linalg.norm(mat, axis=1)
        if np.any(norms == 0):
            bad = ids[int(np.argmin(norms))]
            raise ZeroNorm(f"entry {bad!r} has a zero embedding")
        self._entries = tuple(entries)
        self._by_id = {e.id: e for e in entries}
        self._unit = mat / norms[:, None]
        self._unit.setflags(write=False)
        self.dim = dim

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[CorpusEntry, ...]:
        return self._entries

    def __getitem__(self, entry_id: str) -> CorpusEntry:
        return self._by_id[entry_id]

    def scores(self, q: Embedding) -> np.ndarray:
        if q.dim != self.dim:
            raise DimensionMismatch(f"query dimension {q.dim} != index dimension {self.dim}")
        qv = np.asarray(q.vector, dtype=np.float64)
        qn = float(np.linalg.norm(qv))
        if qn == 0.0:
            raise ZeroNorm("query embedding has zero norm")
        # row-wise product and sum rather than a BLAS matvec, whose blocking can
        # round identical rows differently and break exact ties
        return np.clip((self._unit * (qv / qn)).sum(axis=1), -1.0, 1.0)

    def query(self, q: Embedding, k: int = DEFAULT_K) -> RetrievalResult:
        return query_topk(self, q, k)


def build_index(entries: Iterable[CorpusEntry]) -> Index:
    return Index(list(entries))


def query_topk(index: Index, q: Embedding, k: int = DEFAULT_K) -> RetrievalResult:
    """Highest-cosine entries first; equal scores fall back to ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = index.scores(q)
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.entries[i].id))
    return RetrievalResult(tuple((index.entries[i].id, float(scores[i])) for i in order[:k]))


# ---------------------------------------------------------------------------
# Embedding file: "<id>\t<f>,<f>,..." per line


def write_embeddings(embeddings: Iterable[Embedding], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in embeddings:
            if "\t" in e.id or "\n" in e.id:
                raise ValueError(f"embedding id {e.id!r} contains a tab or newline")
            fh.write(e.id + "\t" + ",".join(repr(float(v)) for v in e.vector) + "\n")


def read_embeddings(path: str | Path) -> list[Embedding]:
    out: list[Embedding] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            try:
                eid, raw = line.split("\t", 1)
                vec = tuple(float(v) for v in raw.split(","))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed embedding record") from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DimensionMismatch(f"{path}:{lineno}: dimension {len(vec)} != {dim}")
            out.append(Embedding(eid, vec))
    return out


# ---------------------------------------------------------------------------
# Index persistence: a JSON entry list plus an embedding file sidecar

INDEX_FORMAT = "posterloop-index/1"


def save_index(index: Index, path: str | Path) -> Path:
    """Write ``path`` (entries and layouts) and ``<path stem>.emb.tsv`` next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    emb_path = path.with_name(path.stem + ".emb.tsv")
    write_embeddings((e.embedding for e in index.entries), emb_path)
    doc = {
        "format": INDEX_FORMAT,
        "dimension": index.dim,
        "embeddings": emb_path.name,
        "entries": [
            {"id": e.id, "image": e.image, "layout": layout_to_dict(e.layout)}
            for e in index.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return emb_path


def load_index(path: str | Path) -> Index:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != INDEX_FORMAT:
        raise ValueError(f"{path}: not a {INDEX_FORMAT} file")
    vectors = {e.id: e for e in read_embeddings(path.parent / doc["embeddings"])}
    entries = []
    for raw in doc["entries"]:
        eid = raw["id"]
        if eid not in vectors:
            raise KeyError(f"{path}: no embedding for entry {eid!r}")
        entries.append(CorpusEntry(eid, raw.get("image"), layout_from_dict(raw["layout"]), vectors[eid]))
    return Index(entries)
