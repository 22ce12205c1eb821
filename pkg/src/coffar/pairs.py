"""Galleries and training-pair generation.

A gallery maps identity ids to lists of 20x20 face images. Training
samples are 20x40 images built by concatenating two faces side by side,
labelled same or different. Two generation strategies exist:

* generate_symmetric enumerates every ordered same-identity pair and
  balances it with an equal number of randomly drawn different-identity
  pairs, then shuffles,
* PairStream draws an endless alternating stream of same and different
  pairs, for step-driven training over the full cross-pair space.

All randomness comes from numpy PCG64 generators seeded through
SeedSequence, so every artifact is reproducible from one seed.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from coffar import images
from coffar.errors import GalleryError, GenerationError, ManifestError, ShapeError

_log = logging.getLogger("coffar.pairs")

FACE_SIZE = images.FACE_SIZE
PAIR_SHAPE = (FACE_SIZE, 2 * FACE_SIZE)

# Fixed spawn keys so each consumer of the root seed gets an
# independent, reproducible stream.
_CONSUMER_KEYS = {
    "model-init": 0,
    "generation": 1,
    "train-order": 2,
    "synthesis": 3,
    "split": 4,
}


def derive_seed(root_seed: int, consumer: str) -> int:
    """Split one root seed into a per-consumer seed, reproducibly."""
    key = _CONSUMER_KEYS[consumer]
    ss = np.random.SeedSequence(root_seed, spawn_key=(key,))
    return int(ss.generate_state(1, np.uint64)[0])


class PairLabel(enum.Enum):
    SAME = "same"
    DIFFERENT = "different"


@dataclass(frozen=True)
class PairSample:
    """One training sample: a 20x40 concatenated pair plus provenance."""

    image: np.ndarray
    label: PairLabel
    id_a: str
    idx_a: int
    id_b: str
    idx_b: int

    @property
    def provenance(self) -> tuple[str, int, str, int]:
        return (self.id_a, self.idx_a, self.id_b, self.idx_b)


@dataclass
class Gallery:
    """Ordered identity -> face-image-list mapping."""

    identities: dict[str, list[np.ndarray]]
    source: str = "synthetic"
    skipped_files: int = 0

    @property
    def ids(self) -> list[str]:
        return list(self.identities.keys())

    def image(self, identity: str, index: int) -> np.ndarray:
        return self.identities[identity][index]

    def counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.identities.items()}

    def total_images(self) -> int:
        return sum(len(v) for v in self.identities.values())

    def uniform_count(self) -> int | None:
        """Images per identity if every identity has the same number."""
        sizes = {len(v) for v in self.identities.values()}
        return sizes.pop() if len(sizes) == 1 else None


@dataclass(frozen=True)
class DatasetStats:
    """Counts reported alongside a generated pair set.

    The capacity fields are the closed-form totals for a uniform
    gallery of n identities with x images each: capacity_same is the
    number of ordered same-identity pairs x*(x-1)*n, capacity_cross_one
    the cross pairs a single identity can form x*x*(n-1), and
    capacity_cross_all the full cross-pair space x*x*(n-1)*n. The two
    cross capacities are None when the gallery is not uniform.
    """

    n_identities: int
    images_per_identity: int | None
    n_same: int
    n_different: int
    capacity_same: int
    capacity_cross_one: int | None
    capacity_cross_all: int | None


def pair_capacities(imgs_per_id: int, n_ids: int) -> tuple[int, int, int]:
    """Closed-form pair counts for a uniform gallery.

    Args:
      imgs_per_id: images per identity (x), at least 1.
      n_ids: number of identities (n), at least 1.

    Returns:
      (same_total, cross_one_identity, cross_total) =
      (x*(x-1)*n, x*x*(n-1), x*x*(n-1)*n).
    """
    x, n = imgs_per_id, n_ids
    if x < 1 or n < 1:
        raise ValueError(f"counts must be positive, got x={x}, n={n}")
    return x * (x - 1) * n, x * x * (n - 1), x * x * (n - 1) * n


def concat_pair(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Join two 20x20 faces into one 20x40 sample, left then right."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    expect = (FACE_SIZE, FACE_SIZE)
    if a.shape != expect or b.shape != expect:
        raise ShapeError(f"faces must be {expect}, got {a.shape} and {b.shape}")
    return np.hstack([a, b])


def dataset_stats(gallery: Gallery, n_same: int, n_diff: int) -> DatasetStats:
    """Assemble the stats block for a generated pair set."""
    counts = gallery.counts()
    uniform = gallery.uniform_count()
    cap_same = sum(x * (x - 1) for x in counts.values())
    cap_one = cap_all = None
    if uniform is not None:
        cap_same, cap_one, cap_all = pair_capacities(uniform, len(counts))
    return DatasetStats(
        n_identities=len(counts),
        images_per_identity=uniform,
        n_same=n_same,
        n_different=n_diff,
        capacity_same=cap_same,
        capacity_cross_one=cap_one,
        capacity_cross_all=cap_all,
    )


def _sample(gallery: Gallery, id_a: str, idx_a: int, id_b: str, idx_b: int,
            label: PairLabel) -> PairSample:
    image = concat_pair(gallery.image(id_a, idx_a), gallery.image(id_b, idx_b))
    return PairSample(image=image, label=label,
                      id_a=id_a, idx_a=idx_a, id_b=id_b, idx_b=idx_b)


def _draw_different(rng: np.random.Generator, ids: list[str],
                    counts: list[int]) -> tuple[int, int, int, int]:
    """Draw a different-identity pair; identities forced distinct by
    rejection resampling."""
    n = len(ids)
    while True:
        a = int(rng.integers(n))
        b = int(rng.integers(n))
        if a != b:
            break
    ia = int(rng.integers(counts[a]))
    ib = int(rng.integers(counts[b]))
    return a, ia, b, ib


def generate_symmetric(
    gallery: Gallery, seed: int, dedupe_different: bool = False
) -> tuple[list[PairSample], DatasetStats]:
    """Balanced dataset: all ordered same pairs plus matched random
    different pairs.

    Every ordered pair of distinct images within an identity is
    enumerated (x*(x-1) per identity), then the same number of
    different-identity pairs is drawn at random, with replacement
    unless dedupe_different is set. The combined list is shuffled with
    the given seed.

    Raises GenerationError when the gallery has fewer than two
    identities. A gallery whose identities all hold a single image
    yields an empty dataset.
    """
    ids = gallery.ids
    if len(ids) < 2:
        raise GenerationError(
            f"need at least two identities to draw different pairs, got {len(ids)}"
        )
    counts = [len(gallery.identities[i]) for i in ids]
    same: list[tuple[int, int, int, int]] = []
    for gi, x in enumerate(counts):
        for i in range(x):
            for j in range(x):
                if i != j:
                    same.append((gi, i, gi, j))
    n_same = len(same)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    total = sum(counts)
    distinct_cross = total * total - sum(x * x for x in counts)
    if dedupe_different and n_same > distinct_cross:
        raise GenerationError(
            f"cannot draw {n_same} distinct different pairs, "
            f"only {distinct_cross} exist"
        )
    different: list[tuple[int, int, int, int]] = []
    seen: set[tuple[int, int, int, int]] = set()
    while len(different) < n_same:
        draw = _draw_different(rng, ids, counts)
        if dedupe_different:
            if draw in seen:
                continue
            seen.add(draw)
        different.append(draw)

    combined = [(t, PairLabel.SAME) for t in same]
    combined += [(t, PairLabel.DIFFERENT) for t in different]
    order = rng.permutation(len(combined))
    pairs = []
    for k in order:
        (ga, ia, gb, ib), label = combined[k]
        pairs.append(_sample(gallery, ids[ga], ia, ids[gb], ib, label))
    return pairs, dataset_stats(gallery, n_same, len(different))


class PairStream:
    """Endless alternating same / different pair stream.

    Draw t yields a same pair when t is even and a different pair
    otherwise. Same pairs use two distinct image indices of one
    identity, different pairs two distinct identities; distinctness is
    enforced by rejection resampling. The stream's RNG state can be
    captured with state() and restored with from_state() so training
    can resume mid-stream bit-exactly.
    """

    def __init__(self, gallery: Gallery, seed: int):
        self._init_common(gallery)
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        self._count = 0

    def _init_common(self, gallery: Gallery) -> None:
        if len(gallery.ids) < 2:
            raise GenerationError(
                f"need at least two identities, got {len(gallery.ids)}"
            )
        if not any(len(v) >= 2 for v in gallery.identities.values()):
            raise GenerationError(
                "need at least one identity with two or more images for same pairs"
            )
        self._gallery = gallery
        self._ids = gallery.ids
        self._counts = [len(gallery.identities[i]) for i in self._ids]

    def __iter__(self) -> "PairStream":
        return self

    def __next__(self) -> PairSample:
        if self._count % 2 == 0:
            sample = self._draw_same()
        else:
            sample = self._draw_different()
        self._count += 1
        return sample

    def _draw_same(self) -> PairSample:
        while True:
            g = int(self._rng.integers(len(self._ids)))
            if self._counts[g] >= 2:
                break
        i, j = (int(v) for v in self._rng.choice(self._counts[g], 2, replace=False))
        return _sample(self._gallery, self._ids[g], i, self._ids[g], j,
                       PairLabel.SAME)

    def _draw_different(self) -> PairSample:
        a, ia, b, ib = _draw_different(self._rng, self._ids, self._counts)
        return _sample(self._gallery, self._ids[a], ia, self._ids[b], ib,
                       PairLabel.DIFFERENT)

    @property
    def draws(self) -> int:
        return self._count

    def state(self) -> dict:
        return {"count": self._count, "rng": self._rng.bit_generator.state}

    @classmethod
    def from_state(cls, gallery: Gallery, state: dict) -> "PairStream":
        stream = cls.__new__(cls)
        stream._init_common(gallery)
        stream._rng = np.random.Generator(np.random.PCG64())
        stream._rng.bit_generator.state = state["rng"]
        stream._count = int(state["count"])
        return stream


def exhaustive_stream(gallery: Gallery, seed: int) -> PairStream:
    """Convenience constructor for PairStream."""
    return PairStream(gallery, seed)


def split_pairs(
    pairs: list[PairSample], train_fraction: float, seed: int
) -> tuple[list[PairSample], list[PairSample]]:
    """Deterministic train/test split keyed on pair provenance.

    Pairs are put in canonical provenance order, shuffled with the
    seed, and cut at train_fraction. The split therefore depends only
    on (provenance, seed), not on the incoming list order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    ordered = sorted(
        range(len(pairs)),
        key=lambda k: (pairs[k].label.value,) + pairs[k].provenance,
    )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(len(ordered))
    shuffled = [pairs[ordered[k]] for k in perm]
    cut = int(len(shuffled) * train_fraction)
    return shuffled[:cut], shuffled[cut:]


def synth_gallery(
    n_ids: int, imgs_per_id: int, noise_level: float, seed: int
) -> Gallery:
    """Synthetic gallery of smooth random faces.

    Each identity gets a base pattern: a seeded 5x5 random grid,
    bilinearly upsampled to 20x20 and rescaled to span [0.2, 0.8].
    Each image is the base pattern plus uniform noise in
    [-noise_level, +noise_level] and, when noise_level > 0, a random
    translation of -1, 0 or +1 pixels per axis. Values are clamped to
    [0, 1].
    """
    if n_ids < 2:
        raise ValueError(f"need at least 2 identities, got {n_ids}")
    if imgs_per_id < 2:
        raise ValueError(f"need at least 2 images per identity, got {imgs_per_id}")
    if not 0.0 <= noise_level <= 0.5:
        raise ValueError(f"noise_level must be in [0, 0.5], got {noise_level}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    width = len(str(max(n_ids - 1, 0)))
    width = max(width, 3)
    identities: dict[str, list[np.ndarray]] = {}
    for gi in range(n_ids):
        grid = rng.uniform(0.0, 1.0, size=(5, 5))
        base = images.bilinear_resize(grid, FACE_SIZE, FACE_SIZE)
        lo, hi = base.min(), base.max()
        if hi > lo:
            base = 0.2 + 0.6 * (base - lo) / (hi - lo)
        else:
            base = np.full_like(base, 0.5)
        imgs = []
        for _ in range(imgs_per_id):
            img = base
            if noise_level > 0.0:
                dy, dx = (int(v) for v in rng.integers(-1, 2, size=2))
                img = images.translate(img, dy, dx)
                img = img + rng.uniform(-noise_level, noise_level, size=img.shape)
            imgs.append(np.clip(img, 0.0, 1.0))
        identities[f"id_{gi:0{width}d}"] = imgs
    return Gallery(identities=identities, source="synthetic")


def write_gallery(gallery: Gallery, root) -> None:
    """Write a gallery as a directory tree of PGM files."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for identity, imgs in gallery.identities.items():
        id_dir = root / identity
        id_dir.mkdir(exist_ok=True)
        width = max(3, len(str(max(len(imgs) - 1, 0))))
        for k, img in enumerate(imgs):
            images.write_pgm(id_dir / f"img_{k:0{width}d}.pgm", img)


def load_gallery(root) -> Gallery:
    """Load a gallery from a <root>/<identity>/<images> directory tree.

    Identities and files are taken in lexicographic order. PGM and PNG
    files are accepted; files that fail to decode are skipped with a
    warning. Identities left with no images are dropped. An empty
    result raises GalleryError.
    """
    root = Path(root)
    if not root.is_dir():
        raise GalleryError(f"gallery root {root} is not a directory")
    identities: dict[str, list[np.ndarray]] = {}
    skipped = 0
    for id_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        imgs = []
        for path in sorted(id_dir.iterdir()):
            if path.suffix.lower() not in (".pgm", ".png") or not path.is_file():
                continue
            try:
                raw = images.read_image(path)
            except images.ImageFormatError as exc:
                _log.warning("skipping unreadable image %s (%s)", path, exc)
                skipped += 1
                continue
            imgs.append(images.standardize_face(raw))
        if imgs:
            identities[id_dir.name] = imgs
        else:
            _log.warning("dropping identity %s: no readable images", id_dir.name)
    if not identities:
        raise GalleryError(f"gallery root {root} holds no readable images")
    return Gallery(identities=identities, source=str(root), skipped_files=skipped)


def write_pair_manifest(pairs: list[PairSample], path, inline: bool = False) -> None:
    """Write pairs as JSON lines. With inline=True each record embeds
    its pixel rows; otherwise records carry provenance only and are
    resolved against a gallery on read."""
    with open(path, "w") as fh:
        for p in pairs:
            rec = {
                "label": p.label.value,
                "id_a": p.id_a,
                "idx_a": p.idx_a,
                "id_b": p.id_b,
                "idx_b": p.idx_b,
            }
            if inline:
                rec["image"] = [list(row) for row in p.image]
            fh.write(json.dumps(rec) + "\n")


_MANIFEST_KEYS = {"label", "id_a", "idx_a", "id_b", "idx_b", "image"}


def read_pair_manifest(path, gallery: Gallery | None = None) -> list[PairSample]:
    """Read a JSON-lines pair manifest written by write_pair_manifest.

    Records without an inline image require a gallery to resolve
    against. Malformed lines and unknown references raise
    ManifestError naming the line number.
    """
    samples: list[PairSample] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: bad JSON ({exc})")
            if not isinstance(rec, dict):
                raise ManifestError(f"{path}:{lineno}: record must be an object")
            unknown = set(rec) - _MANIFEST_KEYS
            if unknown:
                raise ManifestError(
                    f"{path}:{lineno}: unknown keys {sorted(unknown)}"
                )
            try:
                label = PairLabel(rec["label"])
                id_a, idx_a = rec["id_a"], int(rec["idx_a"])
                id_b, idx_b = rec["id_b"], int(rec["idx_b"])
            except (KeyError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}")
            if "image" in rec:
                image = np.asarray(rec["image"], dtype=np.float64)
                if image.shape != PAIR_SHAPE:
                    raise ManifestError(
                        f"{path}:{lineno}: inline image has shape {image.shape}, "
                        f"expected {PAIR_SHAPE}"
                    )
            elif gallery is None:
                raise ManifestError(
                    f"{path}:{lineno}: record references a gallery but none given"
                )
            else:
                try:
                    a = gallery.image(id_a, idx_a)
                    b = gallery.image(id_b, idx_b)
                except (KeyError, IndexError):
                    raise ManifestError(
                        f"{path}:{lineno}: unknown reference "
                        f"({id_a}[{idx_a}], {id_b}[{idx_b}])"
                    )
                image = concat_pair(a, b)
            samples.append(
                PairSample(image=image, label=label, id_a=id_a, idx_a=idx_a,
                           id_b=id_b, idx_b=idx_b)
            )
    return samples
