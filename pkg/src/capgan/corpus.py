"""Dataset representation, feature-file I/O, synthetic corpora, batching.

A clip is a precomputed feature sequence (stand-in for a pretrained audio
encoder's output) plus exactly five reference captions. Feature files are
a tiny binary format: 8-byte magic ``DCFEAT01``, two little-endian u32
(frames, feat_dim), then frames*feat_dim little-endian float32.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import text
from .seeding import substream
from .text import Vocabulary, normalize_and_tokenize

FEATURE_MAGIC = b"DCFEAT01"
N_REFERENCES = 5


class CorpusError(ValueError):
    pass


@dataclass
class ClipRecord:
    clip_id: str
    features: np.ndarray  # [frames, feat_dim] float32
    references: list[list[str]]  # exactly 5 token lists

    def validate(self) -> None:
        if len(self.references) != N_REFERENCES:
            raise CorpusError(
                f"clip {self.clip_id!r}: expected {N_REFERENCES} references, "
                f"got {len(self.references)}"
            )
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise CorpusError(f"clip {self.clip_id!r}: bad feature shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise CorpusError(f"clip {self.clip_id!r}: non-finite feature values")


@dataclass
class DatasetSplit:
    name: str  # train | evaluation
    records: list[ClipRecord]

    def validate(self) -> None:
        ids = [r.clip_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise CorpusError(f"duplicate clip_ids in split {self.name!r}")
        for record in self.records:
            record.validate()

    def all_reference_tokens(self) -> list[list[str]]:
        return [tokens for r in self.records for tokens in r.references]


@dataclass
class Batch:
    clip_ids: list[str]
    features: np.ndarray  # [B, F_max, feat_dim]
    feature_lengths: np.ndarray  # [B]
    targets: np.ndarray  # [B, T_max+2] token ids, sos ... eos then pad
    target_lengths: np.ndarray  # [B] counting sos+content+eos
    mask: np.ndarray  # [B, T_max+1] 1 where the *predicted* position is real

    def __post_init__(self):
        assert self.mask.sum() == (self.target_lengths - 1).sum()


# -- feature files ------------------------------------------------------------


def write_features(path, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    frames, feat_dim = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", frames, feat_dim))
        fh.write(features.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != FEATURE_MAGIC:
        raise CorpusError(f"{path}: not a feature file (bad magic)")
    frames, feat_dim = struct.unpack("<II", raw[8:16])
    expected = 16 + 4 * frames * feat_dim
    if len(raw) != expected:
        raise CorpusError(f"{path}: truncated feature file")
    data = np.frombuffer(raw[16:], dtype="<f4").reshape(frames, feat_dim)
    return np.array(data, dtype=np.float32)


# -- manifests ----------------------------------------------------------------


def load_dataset(manifest_path, name: str = "train") -> DatasetSplit:
    """Load a manifest (JSON array of {clip_id, feature_file, captions})."""
    manifest_path = Path(manifest_path)
    entries = json.loads(manifest_path.read_text(encoding="utf-8"))
    records = []
    for entry in entries:
        clip_id = entry["clip_id"]
        feature_path = manifest_path.parent / entry["feature_file"]
        if not feature_path.exists():
            raise CorpusError(f"clip {clip_id!r}: missing feature file {feature_path}")
        features = read_features(feature_path)
        if len(entry["captions"]) != N_REFERENCES:
            raise CorpusError(
                f"clip {clip_id!r}: expected {N_REFERENCES} captions, "
                f"got {len(entry['captions'])}"
            )
        references = [normalize_and_tokenize(c) for c in entry["captions"]]
        records.append(ClipRecord(clip_id, features, references))
    split = DatasetSplit(name, records)
    split.validate()
    return split


def save_dataset(split: DatasetSplit, out_dir, manifest_name: str | None = None) -> Path:
    """Write feature files plus manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(exist_ok=True)
    entries = []
    for record in split.records:
        feature_file = f"features/{record.clip_id}.feat"
        write_features(out_dir / feature_file, record.features)
        entries.append(
            {
                "clip_id": record.clip_id,
                "feature_file": feature_file,
                "captions": [" ".join(tokens) for tokens in record.references],
            }
        )
    manifest = out_dir / (manifest_name or f"{split.name}.json")
    manifest.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# -- synthetic corpus ---------------------------------------------------------

# Word pools for the template grammar; each class takes a disjoint slice, so
# content words identify the class while function words are shared.
_SUBJECTS = [
    "rain", "thunder", "wind", "engine", "jackhammer", "drill", "birds",
    "crickets", "crowd", "children", "waves", "stream", "dog", "bell",
    "train", "siren", "fire", "typewriter", "horse", "machinery",
]
_VERBS = [
    "falls", "rumbles", "blows", "revs", "pounds", "whirs", "chirp",
    "sing", "chatters", "shout", "crash", "trickles", "barks", "rings",
    "rattles", "wails", "crackles", "clacks", "trots", "hums",
]
_MODIFIERS = [
    "softly", "loudly", "steadily", "roughly", "rapidly", "noisily",
    "sweetly", "quietly", "excitedly", "happily", "heavily", "gently",
    "sharply", "slowly", "rhythmically", "urgently", "warmly", "briskly",
    "evenly", "constantly",
]
_PLACES = [
    "in the distance", "over the rooftops", "through the trees",
    "near the road", "at the worksite", "inside the shed", "in the garden",
    "by the field", "in the square", "at the park", "along the shore",
    "down the valley", "behind the house", "above the town", "on the tracks",
    "across the street", "around the camp", "inside the office",
    "along the trail", "inside the factory",
]

_TEMPLATES = [
    "the {subject} {verb} {modifier} {place}",
    "a {subject} {verb} {place} while it {verb2} {modifier}",
    "{subject} {verb} {modifier} and then {verb2} again {place}",
    "the {subject} {verb} {place} as the {subject2} {verb2}",
    "{subject} {verb} and {verb2} {modifier} {place}",
]


def _class_slice(pool: list[str], class_idx: int, n_classes: int) -> list[str]:
    per_class = max(2, len(pool) // n_classes)
    start = (class_idx * per_class) % len(pool)
    picked = [pool[(start + i) % len(pool)] for i in range(per_class)]
    return picked


def _make_caption(rng, class_idx: int, n_classes: int) -> list[str]:
    subjects = _class_slice(_SUBJECTS, class_idx, n_classes)
    verbs = _class_slice(_VERBS, class_idx, n_classes)
    modifiers = _class_slice(_MODIFIERS, class_idx, n_classes)
    places = _class_slice(_PLACES, class_idx, n_classes)
    template = _TEMPLATES[rng.integers(len(_TEMPLATES))]
    caption = template.format(
        subject=subjects[rng.integers(len(subjects))],
        subject2=subjects[rng.integers(len(subjects))],
        verb=verbs[rng.integers(len(verbs))],
        verb2=verbs[rng.integers(len(verbs))],
        modifier=modifiers[rng.integers(len(modifiers))],
        place=places[rng.integers(len(places))],
    )
    return caption.split()


def generate_synthetic_corpus(
    seed: int,
    n_clips: int,
    n_classes: int,
    feat_dim: int = 64,
    eval_fraction: float = 0.25,
) -> tuple[DatasetSplit, DatasetSplit]:
    """Deterministic class-structured corpus standing in for a real dataset.

    Features are a class-specific mean pattern over frames plus Gaussian
    noise; references come from a class-specific template grammar.
    """
    if n_clips < 10:
        raise ValueError("n_clips must be >= 10")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    rng = substream(seed, "synthetic-corpus")
    # well-separated class directions in feature space
    class_means = rng.standard_normal((n_classes, feat_dim))
    class_means *= 3.0 / np.linalg.norm(class_means, axis=1, keepdims=True)

    records = []
    for i in range(n_clips):
        class_idx = i % n_classes
        frames = int(rng.integers(24, 64))
        wobble = np.sin(np.linspace(0, 2 * np.pi, frames))[:, None] * 0.3
        features = (
            class_means[class_idx][None, :]
            + wobble * class_means[(class_idx + 1) % n_classes][None, :]
            + rng.standard_normal((frames, feat_dim)) * 0.5
        ).astype(np.float32)
        references = [_make_caption(rng, class_idx, n_classes) for _ in range(N_REFERENCES)]
        while len({" ".join(r) for r in references}) == 1:
            references[-1] = _make_caption(rng, class_idx, n_classes)
        records.append(ClipRecord(f"clip_{i:04d}", features, references))

    n_eval = max(1, int(round(n_clips * eval_fraction)))
    train = DatasetSplit("train", records[: n_clips - n_eval])
    evaluation = DatasetSplit("evaluation", records[n_clips - n_eval :])
    train.validate()
    evaluation.validate()
    return train, evaluation


# -- batching -----------------------------------------------------------------


def epoch_batches(
    split: DatasetSplit,
    vocab: Vocabulary,
    batch_size: int,
    rng: np.random.Generator,
    shuffle: bool = True,
    t_max: int = 22,
) -> list[Batch]:
    """One epoch of batches; each clip appears once with one reference
    chosen uniformly for this epoch."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(split.records))
    if shuffle:
        rng.shuffle(order)
    ref_choice = rng.integers(0, N_REFERENCES, size=len(split.records))

    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        recs = [split.records[i] for i in idx]
        feat_dim = recs[0].features.shape[1]
        f_max = max(r.features.shape[0] for r in recs)
        feats = np.zeros((len(recs), f_max, feat_dim), dtype=np.float32)
        feat_lengths = np.zeros(len(recs), dtype=np.int64)
        targets = np.zeros((len(recs), t_max + 2), dtype=np.int64)  # pad = 0
        target_lengths = np.zeros(len(recs), dtype=np.int64)
        mask = np.zeros((len(recs), t_max + 1), dtype=np.float64)
        for b, (record, i) in enumerate(zip(recs, idx)):
            feats[b, : record.features.shape[0]] = record.features
            feat_lengths[b] = record.features.shape[0]
            tokens = record.references[ref_choice[i]][:t_max]
            ids = vocab.encode(tokens)  # sos ... eos
            targets[b, : len(ids)] = ids
            target_lengths[b] = len(ids)
            mask[b, : len(ids) - 1] = 1.0
        batches.append(
            Batch(
                clip_ids=[r.clip_id for r in recs],
                features=feats,
                feature_lengths=feat_lengths,
                targets=targets,
                target_lengths=target_lengths,
                mask=mask,
            )
        )
    return batches


def build_vocabulary(train: DatasetSplit, min_count: int = 1) -> Vocabulary:
    return text.Vocabulary.build(train.all_reference_tokens(), min_count=min_count)
