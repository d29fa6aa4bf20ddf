"""ROUGE metrics, TSLMScore and the temperature / data-fraction sweep harnesses."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datagen import CaptionedPair
from .decoder import SamplingConfig, generate_many
from .errors import ParameterError
from .rng import child_rng

TEMPERATURE_GRID = (0.5, 0.7, 0.9, 0.95, 0.99, 1.0)
FRACTION_GRID = (0, 25, 50, 75, 100)


@dataclass(frozen=True)
class Score:
    precision: float
    recall: float
    f: float


def _tokens(text: str) -> list[str]:
    return text.lower().split()


def _prf(overlap: int, n_cand: int, n_ref: int) -> Score:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return Score(0.0, 0.0, 0.0)
    p, r = overlap / n_cand, overlap / n_ref
    return Score(p, r, 2 * p * r / (p + r))


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int = 1) -> Score:
    """Clipped n-gram overlap; fractions in [0, 1]."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    cand, ref = _ngrams(_tokens(candidate), n), _ngrams(_tokens(reference), n)
    overlap = sum((cand & ref).values())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> Score:
    cand, ref = _tokens(candidate), _tokens(reference)
    return _prf(lcs_length(cand, ref), len(cand), len(ref))


def tslm_score(denoiser, series, caption: str) -> float:
    return denoiser.similarity(series, caption)


def group_references(testset: Sequence[CaptionedPair]) -> list[tuple[tuple, list[str]]]:
    """Collect every caption of the same series (first-seen order)."""
    refs: dict[tuple, list[str]] = {}
    for p in testset:
        refs.setdefault(tuple(p.series), []).append(p.caption)
    return list(refs.items())


def best_f(candidates: Sequence[str], references: Sequence[str], metric: Callable[[str, str], Score]) -> float:
    return max(metric(c, r).f for c in candidates for r in references)


@dataclass
class MetricsRow:
    axis: str
    value: float | None
    n_series: int
    rouge1: float
    rouge2: float
    rougeL: float
    tslm_score: float | None


@dataclass
class MetricsReport:
    sweep: str | None
    rows: list[MetricsRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"sweep": self.sweep, "rows": [asdict(r) for r in self.rows]}

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(MetricsRow.__dataclass_fields__))
            writer.writeheader()
            for row in self.rows:
                writer.writerow(asdict(row))


def score_captions(series_refs, generated: Sequence[Sequence[str]], denoiser=None) -> dict:
    """Per-series best F over (K captions x references), averaged, times 100."""
    if not series_refs:
        raise ParameterError("empty test set")
    r1 = np.mean([best_f(g, refs, lambda c, r: rouge_n(c, r, 1)) for g, (_, refs) in zip(generated, series_refs)])
    r2 = np.mean([best_f(g, refs, lambda c, r: rouge_n(c, r, 2)) for g, (_, refs) in zip(generated, series_refs)])
    rl = np.mean([best_f(g, refs, rouge_l) for g, (_, refs) in zip(generated, series_refs)])
    sim = None
    if denoiser is not None:
        series = [s for (s, _), g in zip(series_refs, generated) for c in g if c.strip()]
        caps = [c for g in generated for c in g if c.strip()]
        sim = float(np.mean(denoiser.score_batch(series, caps))) if caps else 0.0
    return {"rouge1": 100 * float(r1), "rouge2": 100 * float(r2), "rougeL": 100 * float(rl), "tslm_score": sim}


def evaluate_model(model, testset: Sequence[CaptionedPair], cfg: SamplingConfig, denoiser=None, axis: str = "none", value=None) -> MetricsRow:
    series_refs = group_references(testset)
    if not series_refs:
        raise ParameterError("empty test set")
    generated = generate_many(model, [s for s, _ in series_refs], cfg)
    return MetricsRow(axis, value, len(series_refs), **score_captions(series_refs, generated, denoiser))


def evaluate_run(
    model,
    testset: Sequence[CaptionedPair],
    cfg: SamplingConfig,
    denoiser=None,
    sweep: str | None = None,
    temperatures: Sequence[float] = TEMPERATURE_GRID,
    trainer: Callable[[int], object] | None = None,
    fractions: Sequence[int] = FRACTION_GRID,
) -> MetricsReport:
    """Single evaluation, or one row per sweep point.

    ``sweep="temperature"`` re-samples with each temperature of the grid.
    ``sweep="fraction"`` calls ``trainer(percent)`` for a freshly trained
    model per point of the data-fraction axis.
    """
    if not testset:
        raise ParameterError("empty test set")
    report = MetricsReport(sweep)
    if sweep is None:
        report.rows.append(evaluate_model(model, testset, cfg, denoiser))
    elif sweep == "temperature":
        for t in temperatures:
            report.rows.append(evaluate_model(model, testset, replace(cfg, temperature=t), denoiser, "temperature", t))
    elif sweep == "fraction":
        if trainer is None:
            raise ParameterError("fraction sweep needs a trainer")
        for pct in fractions:
            report.rows.append(evaluate_model(trainer(pct), testset, cfg, denoiser, "fraction", pct))
    else:
        raise ParameterError(f"unknown sweep {sweep!r}")
    return report


def fraction_subset(pairs: Sequence[CaptionedPair], percent: float, seed: int) -> list[CaptionedPair]:
    """First ceil(percent% * N) pairs of a seeded permutation; subsets are nested across percents."""
    if not 0 <= percent <= 100:
        raise ParameterError("percent must lie in [0, 100]")
    order = child_rng(seed, "fraction").permutation(len(pairs))
    n = math.ceil(len(pairs) * percent / 100)
    return [pairs[i] for i in order[:n]]
