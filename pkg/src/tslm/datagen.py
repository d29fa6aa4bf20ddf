"""Synthetic series/caption pairs, demonstration grouping and bootstrapped generation."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import GenerationError, InjectionError, ParameterError, TransportError, ProtocolError, ParseError
from .rng import child_rng
from .textrep import round_values

log = logging.getLogger(__name__)

MIN_LEN, MAX_LEN = 12, 50
MAX_DEMOS = 16
LOW, HIGH = 0.01, 99.99


class PatternLabel(NamedTuple):
    trend: str  # increase | decrease
    location: str  # beginning | middle | end


PATTERNS = tuple(PatternLabel(t, loc) for t in ("increase", "decrease") for loc in ("beginning", "middle", "end"))

# fractional windows where the trend segment may sit
LOCATION_WINDOWS = {"beginning": (0.0, 0.4), "middle": (0.3, 0.7), "end": (0.6, 1.0)}

VERBS = {
    "increase": ("increases", "rises", "goes up", "grows"),
    "decrease": ("decreases", "falls", "goes down", "drops"),
}
PLACES = {
    "beginning": ("at the beginning", "at the start", "early on", "in the first part"),
    "middle": ("in the middle", "around the middle", "midway through", "in the central part"),
    "end": ("at the end", "towards the end", "near the end", "in the last part"),
}
SUBJECTS = ("", "the series ", "the value ")

TREND_WORDS = {
    "increase": ("increase", "increases", "rise", "rises", "up", "grow", "grows", "climb", "climbs"),
    "decrease": ("decrease", "decreases", "fall", "falls", "down", "drop", "drops", "decline", "declines"),
}
PLACE_WORDS = {
    "beginning": ("beginning", "start", "early", "first", "initially"),
    "middle": ("middle", "midway", "halfway", "central"),
    "end": ("end", "last", "final", "late", "second"),
}


@dataclass(frozen=True)
class CaptionedPair:
    series: tuple[float, ...]
    caption: str
    source: str = "original"
    score: float | None = None

    def __post_init__(self):
        if not self.caption.strip():
            raise ParameterError("caption must be non-empty")
        if self.source not in ("original", "generated"):
            raise ParameterError(f"unknown source {self.source!r}")
        check_series(self.series)


def check_series(values: Sequence[float], min_len: int = 1, max_len: int | None = None) -> None:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < min_len or (max_len is not None and arr.size > max_len):
        raise ParameterError(f"series length {arr.size} outside [{min_len}, {max_len}]")
    if not np.isfinite(arr).all():
        raise ParameterError("series contains NaN/Inf")
    if (arr <= 0).any() or (arr >= 100).any():
        raise ParameterError("series values must lie strictly inside (0, 100)")


# ----------------------------------------------------------------------
# series and captions
# ----------------------------------------------------------------------
def location_window(location: str, length: int) -> tuple[int, int]:
    lo, hi = LOCATION_WINDOWS[location]
    return int(math.floor(lo * length)), min(length, int(math.ceil(hi * length)))


def gen_synth_series_with_segment(pattern: PatternLabel, length: int, seed, noise: float = 1.5):
    """Series plus the [start, stop) indices of its trend segment."""
    if not MIN_LEN <= length <= MAX_LEN:
        raise ParameterError(f"length must lie in [{MIN_LEN}, {MAX_LEN}], got {length}")
    rng = child_rng(seed, "series") if isinstance(seed, (int, np.integer)) else seed
    w0, w1 = location_window(pattern.location, length)
    max_seg = min(length // 3, w1 - w0)
    seg_len = int(rng.integers(max(3, max_seg // 2), max_seg + 1))
    start = int(rng.integers(w0, w1 - seg_len + 1))
    slope = float(rng.uniform(1.5, 6.0))
    rise = min(slope * (seg_len - 1), 80.0)
    slope = rise / (seg_len - 1)
    if pattern.trend == "increase":
        base = float(rng.uniform(8.0, 92.0 - rise))
        sign = 1.0
    else:
        base = float(rng.uniform(8.0 + rise, 92.0))
        sign = -1.0
    idx = np.arange(length)
    steps = np.clip(idx - start, 0, seg_len - 1)
    values = base + sign * slope * steps
    if noise > 0:
        values = values + rng.uniform(-noise, noise, size=length)
    values = np.clip(values, LOW, HIGH)
    return tuple(float(v) for v in values), (start, start + seg_len)


def gen_synth_series(pattern: PatternLabel, length: int, seed, noise: float = 1.5) -> tuple[float, ...]:
    return gen_synth_series_with_segment(pattern, length, seed, noise)[0]


def caption_templates(pattern: PatternLabel) -> list[str]:
    """Paraphrase bank for a pattern; index 0 is the canonical phrasing."""
    return [f"{subj}{verb} {place}" for subj in SUBJECTS for verb in VERBS[pattern.trend] for place in PLACES[pattern.location]]


def caption_from_pattern(pattern: PatternLabel, seed) -> str:
    rng = child_rng(seed, "caption") if isinstance(seed, (int, np.integer)) else seed
    bank = caption_templates(pattern)
    return bank[int(rng.integers(len(bank)))]


def infer_pattern(caption: str) -> PatternLabel | None:
    words = caption.lower().replace(".", " ").replace(",", " ").split()
    trend = next((t for t, kws in TREND_WORDS.items() if any(w in kws for w in words)), None)
    place = next((p for p, kws in PLACE_WORDS.items() if any(w in kws for w in words)), None)
    if trend is None or place is None:
        return None
    return PatternLabel(trend, place)


def make_synth_dataset(n_series: int, seed: int, annotations: int = 3, min_len: int = MIN_LEN, max_len: int = 24) -> list[CaptionedPair]:
    """Synthetic groundtruth: each series carries ``annotations`` distinct captions."""
    pairs = []
    for i in range(n_series):
        rng = child_rng(seed, "synth", i)
        pattern = PATTERNS[int(rng.integers(len(PATTERNS)))]
        series = gen_synth_series(pattern, int(rng.integers(min_len, max_len + 1)), rng)
        bank = caption_templates(pattern)
        for j in rng.choice(len(bank), size=min(annotations, len(bank)), replace=False):
            pairs.append(CaptionedPair(series, bank[int(j)], "original"))
    return pairs


# ----------------------------------------------------------------------
# grouping
# ----------------------------------------------------------------------
def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def string_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(a, b) / longest)


class DemonstrationGroups:
    """Greedy incremental clustering of pairs by caption similarity.

    Each pair joins the first group whose representative (first member) is
    similar enough and still below the size cap; otherwise it opens a group.
    """

    def __init__(self, sim_threshold: float = 60.0, cap: int = MAX_DEMOS):
        self.sim_threshold = sim_threshold
        self.cap = cap
        self.groups: list[list[CaptionedPair]] = []
        self._sim_cache: dict[tuple[str, str], float] = {}

    def _sim(self, a: str, b: str) -> float:
        key = (a, b)
        if key not in self._sim_cache:
            self._sim_cache[key] = string_similarity(a, b)
        return self._sim_cache[key]

    def add(self, pair: CaptionedPair) -> int:
        for gi, group in enumerate(self.groups):
            if len(group) < self.cap and self._sim(group[0].caption, pair.caption) >= self.sim_threshold:
                group.append(pair)
                return gi
        self.groups.append([pair])
        return len(self.groups) - 1


def group_demonstrations(pool: Sequence[CaptionedPair], sim_threshold: float = 60.0) -> list[list[CaptionedPair]]:
    if not pool:
        raise ParameterError("demonstration pool is empty")
    groups = DemonstrationGroups(sim_threshold)
    for pair in pool:
        groups.add(pair)
    return groups.groups


# ----------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------
@dataclass
class GenerationQuery:
    demonstrations: list[CaptionedPair]
    samples_per_query: int = 3
    bootstrap: bool = False

    def __post_init__(self):
        if len(self.demonstrations) > MAX_DEMOS:
            raise ParameterError(f"at most {MAX_DEMOS} demonstrations per query")
        if self.samples_per_query < 1:
            raise ParameterError("samples_per_query must be >= 1")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for d in self.demonstrations:
            h.update(repr((round_values(d.series), d.caption)).encode("utf-8"))
        return h.hexdigest()


class TemplateBackend:
    """Deterministic stand-in for an in-context LLM generator.

    A prompted LLM partly repeats itself when it receives the same prompt:
    with probability ``prompt_echo`` a sample is drawn from a generator
    seeded by the query content and sample slot, otherwise from fresh
    randomness. The pattern of every sample is inferred from one of the
    demonstrations' captions.
    """

    def __init__(self, seed: int, prompt_echo: float = 0.12, noise: float = 1.5):
        self.seed = seed
        self.prompt_echo = prompt_echo
        self.noise = noise

    def __call__(self, query: GenerationQuery, query_index: int) -> list[CaptionedPair]:
        out = []
        fresh = child_rng(self.seed, "fresh", query_index)
        fp = query.fingerprint()
        for slot in range(query.samples_per_query):
            rng = child_rng(self.seed, "echo", fp, slot) if fresh.random() < self.prompt_echo else fresh
            demo = query.demonstrations[int(rng.integers(len(query.demonstrations)))]
            pattern = infer_pattern(demo.caption) or PATTERNS[int(rng.integers(len(PATTERNS)))]
            length = int(rng.integers(MIN_LEN, MAX_LEN + 1))
            series = gen_synth_series(pattern, length, rng, self.noise)
            out.append(CaptionedPair(series, caption_from_pattern(pattern, rng), "generated"))
        return out


def generate_dataset(
    seed_pool: Sequence[CaptionedPair],
    target_count: int,
    bootstrap: bool = True,
    backend: str | Callable = "template",
    rng_seed: int = 0,
    samples_per_query: int = 3,
    sim_threshold: float = 60.0,
    client=None,
) -> list[CaptionedPair]:
    """Grow a generated dataset query by query from grouped demonstrations.

    ``backend`` is ``"template"``, ``"remote"`` (needs ``client`` from
    :mod:`tslm.llm_client`) or any callable ``(query, index) -> pairs``.
    """
    if not seed_pool:
        raise ParameterError("seed pool is empty")
    if target_count <= 0:
        raise ParameterError("target_count must be positive")
    if backend == "template":
        gen = TemplateBackend(rng_seed)
    elif backend == "remote":
        if client is None:
            raise ParameterError("remote backend needs an LLM client")
        gen = client.generation_backend()
    elif callable(backend):
        gen = backend
    else:
        raise ParameterError(f"unknown backend {backend!r}")

    groups = DemonstrationGroups(sim_threshold)
    for pair in seed_pool:
        groups.add(pair)
    picker = child_rng(rng_seed, "query-picker")
    generated: list[CaptionedPair] = []
    n_queries = math.ceil(target_count / samples_per_query)
    for qi in range(n_queries):
        group = groups.groups[int(picker.integers(len(groups.groups)))]
        query = GenerationQuery(list(group), samples_per_query, bootstrap)
        try:
            new = gen(query, qi)
        except (TransportError, ProtocolError, ParseError) as exc:
            raise GenerationError(f"query {qi} failed: {exc}") from exc
        new = [p if p.source == "generated" else replace(p, source="generated") for p in new]
        generated.extend(new)
        if bootstrap:
            for pair in new:
                groups.add(pair)
    log.info("issued %d queries, %d pairs", n_queries, len(generated))
    return generated[:target_count]


def count_queries(target_count: int, samples_per_query: int = 3) -> int:
    return math.ceil(target_count / samples_per_query)


# ----------------------------------------------------------------------
# noise and audit
# ----------------------------------------------------------------------
def pattern_of(pair: CaptionedPair) -> PatternLabel | None:
    return infer_pattern(pair.caption)


def inject_mispairs(data: Sequence[CaptionedPair], rate: float, rng_seed: int, patterns: Sequence[PatternLabel] | None = None):
    """Give ceil(rate*N) random pairs a caption taken from a different-pattern pair.

    ``patterns`` holds the true pattern of each series; by default it is
    inferred from the current captions. Returns (new data, noisy indices).
    """
    if not 0.0 <= rate <= 1.0:
        raise ParameterError("rate must lie in [0, 1]")
    data = list(data)
    if rate == 0 or not data:
        return data, set()
    labels = list(patterns) if patterns is not None else [pattern_of(p) for p in data]
    n_noisy = math.ceil(rate * len(data) - 1e-9)
    if len(set(labels)) < 2:
        raise InjectionError("all pairs share one pattern; cannot mispair")
    rng = child_rng(rng_seed, "mispair")
    chosen = sorted(int(i) for i in rng.choice(len(data), size=n_noisy, replace=False))
    out = list(data)
    for i in chosen:
        donors = [j for j in range(len(data)) if labels[j] != labels[i]]
        j = donors[int(rng.integers(len(donors)))]
        out[i] = replace(data[i], caption=data[j].caption, score=None)
    return out, set(chosen)


def duplicate_rate(data: Sequence[CaptionedPair]) -> float:
    if not data:
        return 0.0
    keys = {(tuple(round_values(p.series)), p.caption) for p in data}
    return 100.0 * (len(data) - len(keys)) / len(data)
