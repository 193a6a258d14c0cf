"""
Tests for the synthetic corpora, their record files and samplers.
"""

import json

import numpy as np
import pytest

from leaptt.data import (
    balanced_batch,
    balanced_sampler,
    corpus_paths,
    gen_corpus,
    load_corpus,
    make_language,
    sampling_probabilities,
    split_corpus,
    subset_corpus,
)
from leaptt.errors import CorpusFormatError, LeapInputError
from leaptt.types import CorpusConfig, CorpusMode

SMALL = CorpusConfig(
    counts=(6, 3),
    test_counts=2,
    vocab_size=3,
    feature_dim=4,
    label_range=(1, 3),
    repeat_range=(4, 6),
)


class TestLanguages:
    """Tests for make_language()."""

    @pytest.mark.parametrize("mode", [CorpusMode.STANDARD, CorpusMode.CONFLICT])
    def test_codebooks_orthonormal(self, mode):
        """Test every codebook has orthonormal rows."""
        config = CorpusConfig(counts=(1, 1, 1), mode=mode)
        for language in range(3):
            codebook = make_language(4, language, config).codebook
            np.testing.assert_allclose(
                codebook @ codebook.T, np.eye(config.vocab_size), atol=1e-12
            )

    def test_languages_differ(self):
        """Test two languages render the same label differently."""
        first = make_language(4, 0, SMALL).codebook
        second = make_language(4, 1, SMALL).codebook
        assert not np.allclose(first, second)

    def test_conflict_mode_permutes_rows(self):
        """Test conflict languages share rows under a cyclic label shift."""
        config = CorpusConfig(counts=(1, 1), vocab_size=3, feature_dim=4, mode="conflict")
        base = make_language(4, 0, config).codebook
        shifted = make_language(4, 1, config).codebook
        np.testing.assert_array_equal(shifted, base[[1, 2, 0]])

    def test_out_of_range(self):
        """Test the language index must exist."""
        with pytest.raises(LeapInputError):
            make_language(0, 2, SMALL)


class TestGenCorpus:
    """Tests for gen_corpus()."""

    def test_counts_and_ids(self):
        """Test per-language counts and stable ids."""
        corpus = gen_corpus(SMALL, seed=1)
        assert corpus.counts() == (6, 3)
        assert corpus[0].id == "l0-000000"
        assert corpus.languages == [0, 1]
        assert len({utt.id for utt in corpus}) == len(corpus)

    def test_utterance_shapes(self):
        """Test label and frame ranges hold for every utterance."""
        for utt in gen_corpus(SMALL, seed=1):
            assert 1 <= len(utt.labels) <= 3
            assert 4 * len(utt.labels) <= utt.num_frames <= 6 * len(utt.labels)
            assert utt.frames.shape[1] == 4
            assert all(0 <= v < 3 for v in utt.labels)

    def test_deterministic(self):
        """Test the same seed regenerates the same frames."""
        first = gen_corpus(SMALL, seed=9)
        second = gen_corpus(SMALL, seed=9)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.frames, b.frames)
            assert a.labels == b.labels

    def test_test_split(self):
        """Test the test split uses test_counts per language and its own ids."""
        corpus = gen_corpus(SMALL, seed=1, split="test")
        assert corpus.counts() == (2, 2)
        assert corpus[0].id.startswith("t0-")

    def test_noise_free_frames_are_codebook_rows(self):
        """Test zero noise renders exact codebook rows."""
        config = CorpusConfig(
            counts=(2,), vocab_size=3, feature_dim=4, noise_std=0.0, label_range=(1, 1)
        )
        codebook = make_language(2, 0, config).codebook.astype(np.float32)
        for utt in gen_corpus(config, seed=2):
            np.testing.assert_array_equal(utt.frames[0], codebook[utt.labels[0]])

    def test_unknown_split(self):
        """Test only train and test splits exist."""
        with pytest.raises(LeapInputError):
            gen_corpus(SMALL, seed=1, split="dev")


class TestRecordFiles:
    """Tests for write_corpus() and load_corpus()."""

    def test_reload_is_bit_identical(self, tmp_path):
        """Test a stored corpus reloads with identical frames, labels and ids."""
        written = gen_corpus(SMALL, seed=3, out_dir=str(tmp_path))
        loaded = load_corpus(str(tmp_path))
        assert [u.id for u in loaded] == [u.id for u in written]
        for a, b in zip(written, loaded):
            np.testing.assert_array_equal(a.frames, b.frames)
            assert a.labels == b.labels
            assert a.language == b.language
        assert loaded.manifest.seed == 3

    def test_missing_files(self, tmp_path):
        """Test loading an empty directory raises a format error."""
        with pytest.raises(CorpusFormatError):
            load_corpus(str(tmp_path))

    def test_truncated_records(self, tmp_path):
        """Test a cut-off record file is detected."""
        gen_corpus(SMALL, seed=3, out_dir=str(tmp_path))
        records, _ = corpus_paths(str(tmp_path), "train")
        with open(records, "rb") as f:
            data = f.read()
        with open(records, "wb") as f:
            f.write(data[: len(data) // 2])
        with pytest.raises(CorpusFormatError):
            load_corpus(str(tmp_path))

    def test_bad_magic(self, tmp_path):
        """Test a foreign file is rejected."""
        gen_corpus(SMALL, seed=3, out_dir=str(tmp_path))
        records, _ = corpus_paths(str(tmp_path), "train")
        with open(records, "r+b") as f:
            f.write(b"XXXX")
        with pytest.raises(CorpusFormatError):
            load_corpus(str(tmp_path))

    def test_manifest_counts_mismatch(self, tmp_path):
        """Test a manifest that disagrees with the records is rejected."""
        gen_corpus(SMALL, seed=3, out_dir=str(tmp_path))
        _, manifest_path = corpus_paths(str(tmp_path), "train")
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        manifest["counts"] = [5, 4]
        with open(manifest_path, "w", encoding="utf-8") as f:
            json.dump(manifest, f)
        with pytest.raises(CorpusFormatError):
            load_corpus(str(tmp_path))


class TestSplits:
    """Tests for split_corpus() and subset_corpus()."""

    @pytest.fixture
    def corpus(self):
        return list(gen_corpus(CorpusConfig(counts=(40, 40)), seed=5))

    def test_disjoint_and_exhaustive(self, corpus):
        """Test every utterance lands in exactly one side."""
        train, valid = split_corpus(corpus, 0.25)
        ids = sorted(u.id for u in train + valid)
        assert ids == sorted(u.id for u in corpus)
        assert not {u.id for u in train} & {u.id for u in valid}
        assert valid

    def test_order_independent(self, corpus):
        """Test the split does not depend on corpus order."""
        _, valid = split_corpus(corpus, 0.25)
        _, reversed_valid = split_corpus(list(reversed(corpus)), 0.25)
        assert sorted(u.id for u in valid) == sorted(u.id for u in reversed_valid)

    def test_zero_fraction(self, corpus):
        """Test a zero validation fraction keeps everything for training."""
        train, valid = split_corpus(corpus, 0.0)
        assert len(train) == len(corpus)
        assert valid == []

    def test_subset(self, corpus):
        """Test subsets are nested in id order and a full fraction keeps all."""
        quarter = {u.id for u in subset_corpus(corpus, 0.25)}
        half = {u.id for u in subset_corpus(corpus, 0.5)}
        assert quarter <= half
        assert 0 < len(quarter) < len(corpus)
        assert [u.id for u in subset_corpus(corpus, 1.0)] == [u.id for u in corpus]


class TestBalancedSampling:
    """Tests for sampling_probabilities() and the balanced sampler."""

    def test_square_root_weights(self):
        """Test counts [100, 400] at alpha 0.5 give [1/3, 2/3]."""
        np.testing.assert_allclose(sampling_probabilities([100, 400], 0.5), [1 / 3, 2 / 3])

    def test_alpha_zero_is_uniform(self):
        """Test alpha 0 ignores the counts."""
        np.testing.assert_allclose(sampling_probabilities([5, 50, 500], 0.0), [1 / 3] * 3)

    def test_alpha_one_is_proportional(self):
        """Test alpha 1 follows the counts."""
        np.testing.assert_allclose(sampling_probabilities([1, 3], 1.0), [0.25, 0.75])

    @pytest.mark.parametrize("counts", [[], [0, 4]])
    def test_bad_counts(self, counts):
        """Test empty or zero counts are rejected."""
        with pytest.raises(LeapInputError):
            sampling_probabilities(counts, 0.5)

    def test_sampler_frequencies(self):
        """Test the endless sampler matches its probabilities."""
        sampler = balanced_sampler([100, 400], 0.5, np.random.default_rng(0))
        draws = [next(sampler) for _ in range(3000)]
        assert np.mean(draws) == pytest.approx(2 / 3, abs=0.03)

    def test_balanced_batch(self):
        """Test batches draw from the sampled language's pool."""
        corpus = gen_corpus(SMALL, seed=1)
        groups = corpus.by_language()
        sampler = balanced_sampler(corpus.counts(), 0.5, np.random.default_rng(0))
        batch = balanced_batch(groups, 8, sampler, np.random.default_rng(1))
        assert len(batch) == 8
        assert all(any(utt is u for u in groups[utt.language]) for utt in batch)
