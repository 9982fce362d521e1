"""Storage module for persisting toolkit artifacts.

Binary formats (all little-endian):

  embedding store   b"EMBSTORE" | u32 version | u32 dim | u32 count |
                    count x (u16 id_len | id utf-8 | dim x f32)
  feature matrix    b"FEATMAT1" | u32 frames | u32 mels | u32 hop_samples |
                    u8 window_len | window ascii | frames*mels x f32 (row-major)

Text formats (whitespace-separated, newline-terminated):

  manifest          <utterance_id> <wav_path>
  trial list        [<label 0|1>] <enroll_id> <test_id>
  score file        <enroll_id> <test_id> <score>
  augment manifest  tab-separated: utterance_id, source_path, transform, seed, key=value...
  id list           <utterance_id>

Every writer goes through ``atomic_write`` (temp file + rename).
"""

import contextlib
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.augment import ManifestRecord
from core.dsp import FeatureMatrix
from core.errors import InputError
from core.scoring import ScoreSet, Trial

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

STORE_MAGIC = b"EMBSTORE"
STORE_VERSION = 1
FEATURE_MAGIC = b"FEATMAT1"
SEGMENT_SEP = "#"


@contextlib.contextmanager
def atomic_write(path: PathLike, mode: str = "wb") -> Iterator:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        kwargs = {} if "b" in mode else {"encoding": "utf-8", "newline": "\n"}
        with os.fdopen(fd, mode, **kwargs) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _read_lines(path: PathLike, what: str) -> List[Tuple[int, List[str]]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if fields and not fields[0].startswith("#"):
            rows.append((lineno, fields))
    return rows


class EmbeddingStore:
    """Ordered id -> vector records of one fixed dimension."""

    def __init__(self, dim: int):
        """Initialize an empty store for ``dim``-dimensional vectors."""
        if dim <= 0:
            raise InputError(f"embedding dimension must be positive, got {dim}")
        self.dim = dim
        self._records: Dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self._records[key]
        except KeyError:
            raise InputError(f"embedding store has no record {key!r}") from None

    def ids(self) -> List[str]:
        return list(self._records)

    def add(self, key: str, vector: np.ndarray):
        """Add a record; ids must be unique and vectors of length ``dim``."""
        if not key:
            raise InputError("embedding ids must be non-empty")
        if key in self._records:
            raise InputError(f"duplicate embedding id {key!r}")
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.size != self.dim:
            raise InputError(f"record {key!r} has length {vector.size}, store dimension is {self.dim}")
        # Stored as float32 on disk; keep the in-memory copy identical.
        self._records[key] = vector.astype("<f4").astype(np.float64)

    def add_utterance(self, utterance_id: str, segments: np.ndarray):
        """Store ``<id>#k`` per segment plus the L2-normalized mean under ``<id>``."""
        segments = np.atleast_2d(segments)
        for k, vector in enumerate(segments):
            self.add(f"{utterance_id}{SEGMENT_SEP}{k}", vector)
        mean = segments.mean(axis=0)
        norm = np.linalg.norm(mean)
        self.add(utterance_id, mean / norm if norm > 0 else mean)

    def utterance_vectors(self) -> Dict[str, np.ndarray]:
        """Records without a segment suffix."""
        return {k: v for k, v in self._records.items() if SEGMENT_SEP not in k}

    def segments(self, utterance_id: str) -> np.ndarray:
        """Segment vectors of an utterance, or its single vector when none are stored."""
        prefix = f"{utterance_id}{SEGMENT_SEP}"
        found = []
        k = 0
        while f"{prefix}{k}" in self._records:
            found.append(self._records[f"{prefix}{k}"])
            k += 1
        if found:
            return np.stack(found)
        return self[utterance_id][None, :]

    def save(self, path: PathLike):
        with atomic_write(path) as handle:
            handle.write(STORE_MAGIC)
            handle.write(struct.pack("<III", STORE_VERSION, self.dim, len(self._records)))
            for key, vector in self._records.items():
                encoded = key.encode("utf-8")
                handle.write(struct.pack("<H", len(encoded)))
                handle.write(encoded)
                handle.write(vector.astype("<f4").tobytes())
        logger.info("wrote %d embeddings (dim %d) to %s", len(self._records), self.dim, path)

    @classmethod
    def load(cls, path: PathLike) -> "EmbeddingStore":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise InputError(f"cannot read embedding store {path}: {exc}") from exc
        if data[:len(STORE_MAGIC)] != STORE_MAGIC:
            raise InputError(f"{path} is not an embedding store")
        offset = len(STORE_MAGIC)
        if len(data) < offset + 12:
            raise InputError(f"{path}: truncated embedding store header")
        version, dim, count = struct.unpack_from("<III", data, offset)
        if version != STORE_VERSION:
            raise InputError(f"{path}: unsupported store version {version}")
        offset += 12
        store = cls(dim)
        width = 4 * dim
        try:
            for _ in range(count):
                (id_len,) = struct.unpack_from("<H", data, offset)
                offset += 2
                key = data[offset:offset + id_len].decode("utf-8")
                offset += id_len
                if offset + width > len(data):
                    raise InputError(f"{path}: truncated record {key!r}")
                store.add(key, np.frombuffer(data, dtype="<f4", count=dim, offset=offset))
                offset += width
        except struct.error as exc:
            raise InputError(f"{path}: truncated embedding store") from exc
        return store


def write_feature_matrix(feat: FeatureMatrix, path: PathLike):
    window = feat.window.encode("ascii")
    with atomic_write(path) as handle:
        handle.write(FEATURE_MAGIC)
        handle.write(struct.pack("<IIIB", feat.n_frames, feat.n_mels, feat.hop_samples, len(window)))
        handle.write(window)
        handle.write(np.ascontiguousarray(feat.values, dtype="<f4").tobytes())


def read_feature_matrix(path: PathLike) -> FeatureMatrix:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read feature matrix {path}: {exc}") from exc
    if data[:len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise InputError(f"{path} is not a feature matrix file")
    offset = len(FEATURE_MAGIC)
    if len(data) < offset + 13:
        raise InputError(f"{path}: truncated feature matrix header")
    frames, mels, hop, name_len = struct.unpack_from("<IIIB", data, offset)
    offset += 13
    window = data[offset:offset + name_len].decode("ascii")
    offset += name_len
    if len(data) - offset != 4 * frames * mels:
        raise InputError(f"{path}: expected {frames}x{mels} values")
    values = np.frombuffer(data, dtype="<f4", offset=offset).astype(np.float64).reshape(frames, mels)
    return FeatureMatrix(values, hop_samples=hop, window=window)


def read_manifest(path: PathLike) -> List[Tuple[str, str]]:
    """(utterance_id, wav_path) pairs; relative paths resolve against the manifest folder."""
    base = Path(path).parent
    entries = []
    seen = set()
    for lineno, fields in _read_lines(path, "manifest"):
        if len(fields) != 2:
            raise InputError(f"{path}:{lineno}: expected '<utterance_id> <path>'")
        utt, wav = fields
        if utt in seen:
            raise InputError(f"{path}:{lineno}: duplicate utterance id {utt!r}")
        seen.add(utt)
        entries.append((utt, wav if Path(wav).is_absolute() else str(base / wav)))
    return entries


def write_manifest(entries: Sequence[Tuple[str, str]], path: PathLike):
    with atomic_write(path, "w") as handle:
        for utt, wav in entries:
            handle.write(f"{utt} {wav}\n")


def read_trials(path: PathLike) -> List[Trial]:
    """Trial list with an optional leading 0/1 label column."""
    trials = []
    for lineno, fields in _read_lines(path, "trial list"):
        if len(fields) == 3:
            if fields[0] not in ("0", "1"):
                raise InputError(f"{path}:{lineno}: label must be 0 or 1, got {fields[0]!r}")
            trials.append(Trial(fields[1], fields[2], fields[0] == "1"))
        elif len(fields) == 2:
            trials.append(Trial(fields[0], fields[1]))
        else:
            raise InputError(f"{path}:{lineno}: expected '[label] <enroll_id> <test_id>'")
    if not trials:
        raise InputError(f"trial list {path} is empty")
    return trials


def write_trials(trials: Sequence[Trial], path: PathLike):
    with atomic_write(path, "w") as handle:
        for t in trials:
            label = "" if t.label is None else f"{int(t.label)} "
            handle.write(f"{label}{t.enroll_id} {t.test_id}\n")


def read_scores(path: PathLike, system_id: Optional[str] = None) -> ScoreSet:
    keys, values = [], []
    for lineno, fields in _read_lines(path, "score file"):
        if len(fields) != 3:
            raise InputError(f"{path}:{lineno}: expected '<enroll_id> <test_id> <score>'")
        try:
            values.append(float(fields[2]))
        except ValueError:
            raise InputError(f"{path}:{lineno}: invalid score {fields[2]!r}") from None
        keys.append((fields[0], fields[1]))
    if not keys:
        raise InputError(f"score file {path} is empty")
    return ScoreSet(system_id or Path(path).stem, keys, np.array(values))


def format_score(value: float) -> str:
    return f"{value:.10g}"


def write_scores(scores: ScoreSet, path: PathLike):
    with atomic_write(path, "w") as handle:
        for (enroll, test), value in zip(scores.keys, scores.scores):
            handle.write(f"{enroll} {test} {format_score(value)}\n")


def read_id_list(path: PathLike) -> List[str]:
    ids = [fields[0] for _, fields in _read_lines(path, "id list")]
    if not ids:
        raise InputError(f"id list {path} is empty")
    return ids


def write_id_list(ids: Sequence[str], path: PathLike):
    with atomic_write(path, "w") as handle:
        for utt in ids:
            handle.write(f"{utt}\n")


def write_augment_manifest(records: Sequence[ManifestRecord], path: PathLike):
    with atomic_write(path, "w") as handle:
        for r in records:
            columns = [r.utterance_id, r.source_path, r.transform, str(r.seed)]
            columns += [f"{k}={v}" for k, v in r.params]
            handle.write("\t".join(columns) + "\n")


def read_augment_manifest(path: PathLike) -> List[ManifestRecord]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read augmentation manifest {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        columns = line.split("\t")
        if len(columns) < 4:
            raise InputError(f"{path}:{lineno}: expected at least 4 tab-separated columns")
        params = []
        for item in columns[4:]:
            if "=" not in item:
                raise InputError(f"{path}:{lineno}: parameter {item!r} is not key=value")
            key, value = item.split("=", 1)
            params.append((key, value))
        try:
            seed = int(columns[3])
        except ValueError:
            raise InputError(f"{path}:{lineno}: invalid seed {columns[3]!r}") from None
        records.append(ManifestRecord(columns[0], columns[1], columns[2], seed, tuple(params)))
    return records
