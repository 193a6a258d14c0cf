"""
Word error rate arithmetic.

Tokens on synthetic data are label symbols, one "word" per symbol.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

from leaptt.errors import CorpusFormatError, LeapInputError

CSV_COLUMNS = ["locale", "S", "D", "I", "ref_words", "wer"]


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> Tuple[int, int, int]:
    """
    Minimal-cost alignment counts between a reference and a hypothesis.

    Unit costs. Among minimal alignments the one with the most substitutions
    wins, which makes the counts unique: swapping ref and hyp keeps S and swaps
    D with I.

    Returns:
        (substitutions, deletions, insertions)

    Examples:
        >>> edit_distance("the cat sat".split(), "the sat".split())
        (0, 1, 0)
    """
    # cell = (errors, -substitutions, substitutions, deletions, insertions)
    prev = [(j, 0, 0, 0, j) for j in range(len(hyp) + 1)]
    for i in range(1, len(ref) + 1):
        cur = [(i, 0, 0, i, 0)]
        for j in range(1, len(hyp) + 1):
            diag = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                candidates = [diag]
            else:
                candidates = [(diag[0] + 1, diag[1] - 1, diag[2] + 1, diag[3], diag[4])]
            up = prev[j]
            left = cur[j - 1]
            candidates.append((up[0] + 1, up[1], up[2], up[3] + 1, up[4]))
            candidates.append((left[0] + 1, left[1], left[2], left[3], left[4] + 1))
            # min keeps the first of equal keys: substitution, deletion, insertion
            cur.append(min(candidates, key=lambda cell: (cell[0], cell[1])))
        prev = cur
    _, _, subs, dels, ins = prev[-1]
    return subs, dels, ins


def wer_percent(substitutions: int, deletions: int, insertions: int, ref_words: int) -> float:
    if ref_words <= 0:
        raise LeapInputError(f"WER needs at least one reference word, got {ref_words}")
    return 100.0 * (substitutions + deletions + insertions) / ref_words


def weighted_overall_wer(per_locale: Sequence[Tuple[float, float]]) -> float:
    """
    Word-count-weighted average of per-locale WERs.

    Args:
        per_locale: (wer percent, reference words) pairs

    Raises:
        LeapInputError: If the list is empty or a word count is not positive

    Examples:
        >>> weighted_overall_wer([(10.0, 1), (20.0, 1)])
        15.0
    """
    if not per_locale:
        raise LeapInputError("weighted_overall_wer needs at least one locale")
    total_words = 0.0
    weighted = 0.0
    for wer, words in per_locale:
        if words <= 0:
            raise LeapInputError(f"Reference word count must be > 0, got {words}")
        weighted += wer * words
        total_words += words
    return weighted / total_words


def relative_reduction(baseline: float, new: float) -> float:
    """
    Relative WER reduction in percent: 100 * (baseline - new) / baseline.

    Raises:
        LeapInputError: If baseline <= 0
    """
    if baseline <= 0:
        raise LeapInputError(f"Baseline WER must be > 0, got {baseline}")
    return 100.0 * (baseline - new) / baseline


def per_locale_relative_reductions(
    baseline: Mapping[str, float], new: Mapping[str, float]
) -> Dict[str, float]:
    """
    Relative reduction for every locale present in both rows.

    Raises:
        LeapInputError: If the rows share no locale
    """
    shared = [locale for locale in baseline if locale in new]
    if not shared:
        raise LeapInputError("Rows have no locale in common")
    return {locale: relative_reduction(baseline[locale], new[locale]) for locale in shared}


# ============================================================================
# Reports
# ============================================================================


@dataclass
class LocaleWer:
    """Error counts of one locale."""

    locale: str
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_words: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return wer_percent(self.substitutions, self.deletions, self.insertions, self.ref_words)

    def add(self, ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> None:
        """Accumulates the counts of one utterance."""
        subs, dels, ins = edit_distance(ref, hyp)
        self.substitutions += subs
        self.deletions += dels
        self.insertions += ins
        self.ref_words += len(ref)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "locale": self.locale,
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "ref_words": self.ref_words,
            "wer": self.wer,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LocaleWer":
        try:
            return cls(
                locale=str(data["locale"]),
                substitutions=int(data["substitutions"]),
                deletions=int(data["deletions"]),
                insertions=int(data["insertions"]),
                ref_words=int(data["ref_words"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise CorpusFormatError(f"Malformed locale entry in WER report: {e}") from e


@dataclass
class WerReport:
    """
    Per-locale WER plus the word-weighted overall WER.

    Attributes:
        locales: One entry per locale, in evaluation order
        mean_loss: Optional mean transducer loss over the evaluated set
    """

    locales: List[LocaleWer] = field(default_factory=list)
    mean_loss: Optional[float] = None

    @property
    def overall(self) -> float:
        return weighted_overall_wer([(loc.wer, loc.ref_words) for loc in self.locales])

    def by_locale(self) -> Dict[str, float]:
        return {loc.locale: loc.wer for loc in self.locales}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "locales": [loc.to_dict() for loc in self.locales],
            "overall_wer": self.overall,
            "mean_loss": self.mean_loss,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WerReport":
        if not isinstance(data, dict) or "locales" not in data:
            raise CorpusFormatError("WER report must be an object with a 'locales' list")
        return cls(
            locales=[LocaleWer.from_dict(item) for item in data["locales"]],
            mean_loss=data.get("mean_loss"),
        )

    @classmethod
    def from_json(cls, text: str) -> "WerReport":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"WER report is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def to_csv(self) -> str:
        """CSV with columns locale,S,D,I,ref_words,wer, one row per locale."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for loc in self.locales:
            writer.writerow(
                [
                    loc.locale,
                    loc.substitutions,
                    loc.deletions,
                    loc.insertions,
                    loc.ref_words,
                    f"{loc.wer:.4f}",
                ]
            )
        return buffer.getvalue()
