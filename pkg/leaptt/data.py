"""
Synthetic multi-language corpora.

Each language renders labels through its own orthonormal codebook: label v
becomes a run of 4-8 noisy copies of codebook row v. Language 0 uses the base
codebook, every other language a seeded rotation of it, so the languages are
distinct tasks over the same label set. In "conflict" mode all languages
share the base rows under cyclic label permutations, so labels are ambiguous
without the language one-hot.

Record file layout (little-endian)::

    b"GMDS" | u32 version
    per record: u16 language | u32 T | u32 U | u16 labels[U] | f32 frames[T * d]
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from leaptt.errors import CorpusFormatError, LeapInputError
from leaptt.types import CorpusConfig, CorpusManifest, CorpusMode, Utterance
from leaptt.utils import derive_seed, validate_probability

GENERATOR_VERSION = 1
RECORD_MAGIC = b"GMDS"
_FILE_HEADER = struct.Struct("<4sI")
_RECORD_HEADER = struct.Struct("<HII")
# hash buckets used by split_corpus and subset_corpus
_BUCKETS = 10000


@dataclass(frozen=True, eq=False)
class SynthLanguage:
    """
    One synthetic language.

    Attributes:
        language: Language index
        codebook: V x feature_dim matrix with orthonormal rows
        noise_std: Gaussian noise added to every frame
    """

    language: int
    codebook: np.ndarray
    noise_std: float

    @property
    def vocab_size(self) -> int:
        return int(self.codebook.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.codebook.shape[1])


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """rows x cols matrix with orthonormal rows from a sign-fixed QR decomposition."""
    q, r = np.linalg.qr(rng.standard_normal((cols, rows)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return (q * signs).T


def base_codebook(seed: int, vocab_size: int, feature_dim: int) -> np.ndarray:
    """Codebook shared by all languages before their rotation."""
    rng = np.random.default_rng(derive_seed(seed, "codebook"))
    return _orthonormal(rng, vocab_size, feature_dim)


def make_language(seed: int, language: int, config: CorpusConfig) -> SynthLanguage:
    """
    Builds language ``language`` of a corpus seed.

    Raises:
        LeapInputError: If the language index is out of range

    Examples:
        >>> cfg = CorpusConfig(counts=(10, 10))
        >>> lang = make_language(0, 1, cfg)
        >>> np.allclose(lang.codebook @ lang.codebook.T, np.eye(cfg.vocab_size))
        True
    """
    if not 0 <= language < config.num_languages:
        raise LeapInputError(
            f"Language {language} out of range for {config.num_languages} languages"
        )
    base = base_codebook(seed, config.vocab_size, config.feature_dim)

    if config.mode == CorpusMode.CONFLICT:
        # row v of language l is base row (v + l) mod V
        order = (np.arange(config.vocab_size) + language) % config.vocab_size
        codebook = base[order]
    elif language == 0:
        codebook = base
    else:
        rng = np.random.default_rng(derive_seed(seed, f"rotation-{language}"))
        rotation = _orthonormal(rng, config.feature_dim, config.feature_dim)
        codebook = base @ rotation
    return SynthLanguage(language, codebook, config.noise_std)


def sample_utterance(
    lang: SynthLanguage,
    label_range: Tuple[int, int],
    repeat_range: Tuple[int, int],
    rng: np.random.Generator,
    utterance_id: str = "",
) -> Utterance:
    """
    Draws one utterance: U uniform labels, each rendered as r noisy codebook rows.

    Frames are rounded to float32 so a stored corpus reloads bit-identically.
    """
    num_labels = int(rng.integers(label_range[0], label_range[1] + 1))
    labels = rng.integers(lang.vocab_size, size=num_labels)
    repeats = rng.integers(repeat_range[0], repeat_range[1] + 1, size=num_labels)

    frames = np.repeat(lang.codebook[labels], repeats, axis=0)
    if lang.noise_std > 0:
        frames = frames + lang.noise_std * rng.standard_normal(frames.shape)
    frames = frames.astype(np.float32).astype(np.float64)
    return Utterance(
        frames=frames,
        labels=tuple(int(v) for v in labels),
        language=lang.language,
        id=utterance_id,
    )


class Corpus:
    """
    Utterances in generation order plus their manifest.

    Utterances are grouped by language, languages in ascending order.
    """

    def __init__(self, utterances: Sequence[Utterance], manifest: Optional[CorpusManifest] = None):
        self.utterances = list(utterances)
        self.manifest = manifest

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def __getitem__(self, index: int) -> Utterance:
        return self.utterances[index]

    @property
    def languages(self) -> List[int]:
        return sorted({utt.language for utt in self.utterances})

    def by_language(self) -> Dict[int, List[Utterance]]:
        groups: Dict[int, List[Utterance]] = {}
        for utt in self.utterances:
            groups.setdefault(utt.language, []).append(utt)
        return dict(sorted(groups.items()))

    def counts(self, num_languages: Optional[int] = None) -> Tuple[int, ...]:
        size = num_languages if num_languages is not None else max(self.languages, default=-1) + 1
        totals = [0] * size
        for utt in self.utterances:
            totals[utt.language] += 1
        return tuple(totals)


def gen_corpus(
    config: CorpusConfig,
    seed: int,
    split: str = "train",
    out_dir: Optional[str] = None,
) -> Corpus:
    """
    Generates a corpus deterministically from ``seed``.

    Codebooks depend only on the seed, so the "train" and "test" splits share
    their languages; utterances are drawn from split-specific streams.

    Args:
        config: Corpus configuration (counts per language, ranges, noise, mode)
        seed: Global seed
        split: "train" (``config.counts`` per language) or "test" (``test_counts``)
        out_dir: If given, records and manifest are written there

    Raises:
        LeapInputError: For an unknown split
        OSError: If out_dir is not writable
    """
    if split == "train":
        counts = config.counts
        stage, prefix = "corpus", "l"
    elif split == "test":
        counts = tuple(config.test_counts for _ in config.counts)
        stage, prefix = "test-corpus", "t"
    else:
        raise LeapInputError(f"Unknown corpus split {split!r}")

    rng = np.random.default_rng(derive_seed(seed, stage))
    utterances = []
    for language, count in enumerate(counts):
        lang = make_language(seed, language, config)
        for k in range(count):
            utterances.append(
                sample_utterance(
                    lang,
                    config.label_range,
                    config.repeat_range,
                    rng,
                    utterance_id=f"{prefix}{language}-{k:06d}",
                )
            )

    corpus = Corpus(utterances)
    if out_dir is not None:
        corpus.manifest = write_corpus(corpus, out_dir, split, seed, config)
    else:
        corpus.manifest = _manifest(corpus, [], seed, config)
    return corpus


# ============================================================================
# Record files
# ============================================================================


def _encode_record(utt: Utterance) -> bytes:
    labels = np.asarray(utt.labels, dtype="<u2").tobytes()
    frames = utt.frames.astype("<f4").tobytes()
    return _RECORD_HEADER.pack(utt.language, utt.num_frames, len(utt.labels)) + labels + frames


def _manifest(
    corpus: Corpus, offsets: List[int], seed: int, config: CorpusConfig
) -> CorpusManifest:
    return CorpusManifest(
        counts=corpus.counts(config.num_languages),
        offsets=tuple(offsets),
        seed=seed,
        generator_version=GENERATOR_VERSION,
        feature_dim=config.feature_dim,
        vocab_size=config.vocab_size,
        mode=CorpusMode(config.mode).value,
        ids=tuple(utt.id for utt in corpus),
    )


def corpus_paths(directory: str, split: str) -> Tuple[str, str]:
    """(record file, manifest file) of a split inside a corpus directory."""
    return (
        os.path.join(directory, f"{split}.gmds"),
        os.path.join(directory, f"{split}.manifest.json"),
    )


def write_corpus(
    corpus: Corpus, directory: str, split: str, seed: int, config: CorpusConfig
) -> CorpusManifest:
    """Writes the record file and its JSON manifest; returns the manifest."""
    os.makedirs(directory, exist_ok=True)
    records_path, manifest_path = corpus_paths(directory, split)

    offsets = []
    chunks = [_FILE_HEADER.pack(RECORD_MAGIC, GENERATOR_VERSION)]
    position = _FILE_HEADER.size
    for utt in corpus:
        record = _encode_record(utt)
        offsets.append(position)
        chunks.append(record)
        position += len(record)

    with open(records_path, "wb") as f:
        f.write(b"".join(chunks))

    manifest = _manifest(corpus, offsets, seed, config)
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest


def load_corpus(directory: str, split: str = "train") -> Corpus:
    """
    Reads a corpus written by gen_corpus.

    Raises:
        CorpusFormatError: If files are missing, corrupt, or disagree with the manifest
    """
    records_path, manifest_path = corpus_paths(directory, split)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = CorpusManifest.from_dict(json.load(f))
        with open(records_path, "rb") as f:
            data = f.read()
    except (OSError, ValueError, KeyError) as e:
        raise CorpusFormatError(f"Cannot read corpus '{split}' in {directory}: {e}") from e

    if len(data) < _FILE_HEADER.size:
        raise CorpusFormatError(f"{records_path} is truncated")
    magic, version = _FILE_HEADER.unpack_from(data)
    if magic != RECORD_MAGIC or version != GENERATOR_VERSION:
        raise CorpusFormatError(f"{records_path} is not a version {GENERATOR_VERSION} record file")

    dim = manifest.feature_dim
    utterances = []
    for index, offset in enumerate(manifest.offsets):
        try:
            language, num_frames, num_labels = _RECORD_HEADER.unpack_from(data, offset)
            cursor = offset + _RECORD_HEADER.size
            labels = np.frombuffer(data, dtype="<u2", count=num_labels, offset=cursor)
            cursor += 2 * num_labels
            frames = np.frombuffer(data, dtype="<f4", count=num_frames * dim, offset=cursor)
        except (struct.error, ValueError) as e:
            raise CorpusFormatError(f"{records_path}: record {index} is truncated") from e

        utt_id = manifest.ids[index] if index < len(manifest.ids) else f"r{index:06d}"
        try:
            utterances.append(
                Utterance(
                    frames=frames.reshape(num_frames, dim).astype(np.float64),
                    labels=tuple(int(v) for v in labels),
                    language=int(language),
                    id=utt_id,
                )
            )
        except LeapInputError as e:
            raise CorpusFormatError(f"{records_path}: record {index}: {e}") from e

    corpus = Corpus(utterances, manifest)
    if corpus.counts(len(manifest.counts)) != tuple(manifest.counts):
        raise CorpusFormatError(
            f"{records_path}: stored counts {corpus.counts(len(manifest.counts))} "
            f"do not match manifest {tuple(manifest.counts)}"
        )
    return corpus


# ============================================================================
# Splits and sampling
# ============================================================================


def _bucket(utterance_id: str, salt: str) -> int:
    digest = hashlib.sha256(f"{salt}:{utterance_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % _BUCKETS


def split_corpus(
    utterances: Sequence[Utterance], valid_fraction: float = 0.1
) -> Tuple[List[Utterance], List[Utterance]]:
    """
    Splits by a hash of the utterance id into (train, validation).

    The split is disjoint and exhaustive and does not depend on order.
    """
    validate_probability("valid_fraction", valid_fraction)
    cutoff = round(valid_fraction * _BUCKETS)
    train, valid = [], []
    for utt in utterances:
        (valid if _bucket(utt.id, "split") < cutoff else train).append(utt)
    return train, valid


def subset_corpus(utterances: Sequence[Utterance], fraction: float) -> List[Utterance]:
    """Keeps roughly ``fraction`` of the utterances, chosen by id hash."""
    validate_probability("fraction", fraction)
    if fraction >= 1.0:
        return list(utterances)
    cutoff = round(fraction * _BUCKETS)
    return [utt for utt in utterances if _bucket(utt.id, "subset") < cutoff]


def sampling_probabilities(counts: Sequence[int], alpha: float) -> np.ndarray:
    """
    P(l) proportional to n_l ** alpha.

    Examples:
        >>> sampling_probabilities([100, 400], 0.5).tolist()
        [0.3333333333333333, 0.6666666666666666]
    """
    validate_probability("alpha", alpha)
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 1):
        raise LeapInputError(f"Language counts must all be >= 1, got {counts.tolist()}")
    weights = counts**alpha
    return weights / weights.sum()


def balanced_sampler(
    counts: Sequence[int], alpha: float, rng: np.random.Generator
) -> Iterator[int]:
    """Endless stream of language indices drawn with sampling_probabilities."""
    probs = sampling_probabilities(counts, alpha)
    while True:
        yield int(rng.choice(len(probs), p=probs))


def balanced_batch(
    groups: Dict[int, List[Utterance]],
    batch_size: int,
    sampler: Iterator[int],
    rng: np.random.Generator,
) -> List[Utterance]:
    """
    Mini-batch whose languages come from the balanced sampler.

    ``groups`` maps the sampler's index positions (sorted languages) to utterances.
    """
    languages = list(groups)
    batch = []
    for _ in range(batch_size):
        pool = groups[languages[next(sampler)]]
        batch.append(pool[int(rng.integers(len(pool)))])
    return batch
