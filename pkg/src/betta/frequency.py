"""Frequency-count tables: ingestion, validation and simple summaries.

A frequency-count table records, for one sample, how many species were seen
exactly ``j`` times (``f_j``). Everything downstream needs only these counts,
so species identities are never stored.
"""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, TextIO, Union

from betta.errors import ParseError

TextSource = Union[str, TextIO]


@dataclass(frozen=True)
class FrequencyCountTable:
    """Validated ``(j, f_j)`` pairs for a single sample.

    ``entries`` is kept sorted by ``j`` with all ``f_j > 0``; construction
    through :meth:`from_pairs` drops zero rows and sorts.
    """

    entries: tuple[tuple[int, int], ...]
    sample_id: str = "sample"

    def __post_init__(self):
        if not self.entries:
            raise ValueError("frequency table is empty")
        prev = 0
        for j, f in self.entries:
            if not (isinstance(j, int) and isinstance(f, int)):
                raise TypeError("frequencies and counts must be integers")
            if j < 1:
                raise ValueError(f"frequency must be >= 1, got {j}")
            if j <= prev:
                raise ValueError("frequencies must be strictly increasing")
            if f < 0:
                raise ValueError(f"count must be >= 0, got {f}")
            prev = j
        if self.c_obs == 0:
            raise ValueError("frequency table has no observed species")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], sample_id: str = "sample"):
        """Build a table from unsorted pairs, dropping zero counts."""
        seen = {}
        for j, f in pairs:
            j, f = int(j), int(f)
            if j in seen:
                raise ValueError(f"duplicate frequency {j}")
            seen[j] = f
        kept = tuple(sorted((j, f) for j, f in seen.items() if f != 0))
        return cls(kept, sample_id)

    @property
    def c_obs(self) -> int:
        """Observed richness, the number of distinct species seen."""
        return sum(f for _, f in self.entries)

    @property
    def n(self) -> int:
        """Sample size (total number of individuals)."""
        return sum(j * f for j, f in self.entries)

    @property
    def frequencies(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.entries)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(f for _, f in self.entries)

    def count(self, j: int) -> int:
        """``f_j``, zero when ``j`` is absent."""
        for k, f in self.entries:
            if k == j:
                return f
        return 0

    def to_abundances(self) -> "AbundanceVector":
        out = []
        for j, f in self.entries:
            out.extend([j] * f)
        return AbundanceVector(tuple(out))


@dataclass(frozen=True)
class AbundanceVector:
    """Per-species abundances ``n_i`` for one sample (all ``>= 1``)."""

    counts: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for x in self.counts:
            if int(x) != x or x < 1:
                raise ValueError(f"abundances must be integers >= 1, got {x!r}")


def _as_text(text: TextSource) -> TextIO:
    return io.StringIO(text) if isinstance(text, str) else text


def _parse_int(token: str) -> int:
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        value = float(token)
        if not value.is_integer():
            raise ValueError(f"not an integer: {token!r}") from None
        return int(value)


def _split(line: str) -> list[str]:
    if "\t" in line:
        return line.split("\t")
    return line.split(",")


def parse_frequency_table(text: TextSource, sample_id: str = "sample") -> FrequencyCountTable:
    """Parse a two-column ``j,f_j`` table (comma or tab delimited).

    A non-numeric first row is taken as a header. Rows with ``f_j = 0`` are
    dropped and the result is sorted by ``j``.

    Raises
    ------
    ParseError
        On non-integer values, duplicate or non-positive frequencies, negative
        counts, or an empty table. The message names the offending line.
    """
    stream = _as_text(text)
    pairs: dict[int, int] = {}
    first_data_line = None
    header_allowed = True
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = [t.strip() for t in _split(line)]
        if len(tokens) != 2:
            raise ParseError(f"expected 2 columns, found {len(tokens)}", line=lineno, source=sample_id)
        try:
            j, f = _parse_int(tokens[0]), _parse_int(tokens[1])
        except ValueError as exc:
            if header_allowed and not any(_looks_numeric(t) for t in tokens):
                header_allowed = False
                continue
            raise ParseError(str(exc), line=lineno, source=sample_id) from None
        header_allowed = False
        if first_data_line is None:
            first_data_line = lineno
        if j < 1:
            raise ParseError(f"frequency must be >= 1, got {j}", line=lineno, source=sample_id)
        if f < 0:
            raise ParseError(f"count must be >= 0, got {f}", line=lineno, source=sample_id)
        if j in pairs:
            raise ParseError(f"duplicate frequency {j}", line=lineno, source=sample_id)
        pairs[j] = f
    if not any(pairs.values()):
        raise ParseError("empty frequency table", line=first_data_line, source=sample_id)
    return FrequencyCountTable.from_pairs(pairs.items(), sample_id)


def _looks_numeric(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def parse_abundances(text: TextSource, sample_id: str = "sample") -> AbundanceVector:
    """Parse one positive integer abundance per line."""
    values = []
    for lineno, raw in enumerate(_as_text(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            value = _parse_int(line)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, source=sample_id) from None
        if value < 1:
            raise ParseError(f"abundance must be >= 1, got {value}", line=lineno, source=sample_id)
        values.append(value)
    if not values:
        raise ParseError("empty abundance vector", source=sample_id)
    return AbundanceVector(tuple(values))


def from_abundances(v: AbundanceVector | Iterable[int], sample_id: str = "sample") -> FrequencyCountTable:
    """Tally per-species abundances into a frequency-count table."""
    if not isinstance(v, AbundanceVector):
        v = AbundanceVector(tuple(int(x) for x in v))
    if not v.counts:
        raise ValueError("abundance vector is empty")
    tally = Counter(v.counts)
    return FrequencyCountTable(tuple(sorted(tally.items())), sample_id)


def simpson_plugin(t: FrequencyCountTable) -> float:
    """Plug-in Simpson index ``sum_i (n_i / n)**2``.

    Provided for comparison only. The value mixes evenness with richness: a
    small index can mean many species or very unequal proportions, and the
    plug-in form is not the minimum-variance unbiased estimator. Prefer
    modelling total richness directly.
    """
    n = t.n
    return sum(f * (j / n) ** 2 for j, f in t.entries)
