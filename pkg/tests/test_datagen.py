import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tslm.datagen import (
    MAX_DEMOS,
    PATTERNS,
    CaptionedPair,
    GenerationQuery,
    PatternLabel,
    caption_from_pattern,
    caption_templates,
    count_queries,
    duplicate_rate,
    gen_synth_series,
    gen_synth_series_with_segment,
    generate_dataset,
    group_demonstrations,
    infer_pattern,
    inject_mispairs,
    make_synth_dataset,
    string_similarity,
)
from tslm.errors import GenerationError, InjectionError, ParameterError, TransportError


def test_increase_in_middle_segment():
    pattern = PatternLabel("increase", "middle")
    for seed in range(20):
        series, (start, stop) = gen_synth_series_with_segment(pattern, 24, seed)
        assert 7 <= start and stop - 1 <= 16
        seg = np.asarray(series[start:stop])
        assert np.polyfit(np.arange(len(seg)), seg, 1)[0] > 0
        assert np.mean(series[stop - 2 : stop]) > np.mean(series[start : start + 2])


def test_zero_noise_flat_regions_are_constant():
    series, (start, stop) = gen_synth_series_with_segment(PatternLabel("decrease", "end"), 30, 4, noise=0.0)
    assert len(set(series[:start])) <= 1
    assert len(set(series[stop:])) <= 1


def test_series_length_checked():
    with pytest.raises(ParameterError):
        gen_synth_series(PATTERNS[0], 11, 0)
    with pytest.raises(ParameterError):
        gen_synth_series(PATTERNS[0], 51, 0)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(PATTERNS), st.integers(12, 50), st.integers(0, 2**31))
def test_series_bounds_and_determinism(pattern, length, seed):
    a = gen_synth_series(pattern, length, seed)
    assert len(a) == length
    assert all(0 < v < 100 for v in a)
    assert a == gen_synth_series(pattern, length, seed)


def test_captions():
    assert caption_templates(PatternLabel("increase", "middle"))[0] == "increases in the middle"
    assert caption_from_pattern(PATTERNS[2], 5) == caption_from_pattern(PATTERNS[2], 5)
    for p in PATTERNS:
        assert all(infer_pattern(c) == p for c in caption_templates(p))


def test_string_similarity_examples():
    assert string_similarity("abc", "abc") == 100
    assert string_similarity("abc", "abd") == pytest.approx(66.67, abs=0.01)
    assert string_similarity("abc", "xyz") == 0
    assert string_similarity("", "") == 100


def pair(caption, seed=0):
    return CaptionedPair(gen_synth_series(PATTERNS[0], 12, seed), caption)


def test_grouping_examples():
    assert len(group_demonstrations([pair("increases in the middle")] * 5)) == 1
    singles = group_demonstrations([pair("aaaa"), pair("bbbb"), pair("cccc")])
    assert [len(g) for g in singles] == [1, 1, 1]
    capped = group_demonstrations([pair("same caption")] * 20)
    assert [len(g) for g in capped] == [16, 4]


@settings(max_examples=20, deadline=None)
@given(st.lists(st.sampled_from([c for p in PATTERNS for c in caption_templates(p)]), min_size=1, max_size=40))
def test_group_members_close_to_representative(captions):
    for group in group_demonstrations([pair(c) for c in captions]):
        assert len(group) <= MAX_DEMOS
        assert all(string_similarity(group[0].caption, m.caption) >= 60 for m in group)


def test_query_count_and_budget():
    assert count_queries(9, 3) == 3
    calls = []

    def backend(query, index):
        calls.append(index)
        return [pair("increases at the end", index * 3 + j) for j in range(3)]

    out = generate_dataset(make_synth_dataset(5, 0), 9, backend=backend)
    assert calls == [0, 1, 2] and len(out) == 9
    assert all(p.source == "generated" for p in out)


def test_generated_pairs_are_valid():
    out = generate_dataset(make_synth_dataset(10, 1), 60, bootstrap=True, rng_seed=2)
    assert len(out) == 60
    assert all(12 <= len(p.series) <= 50 and all(0 < v < 100 for v in p.series) for p in out)
    assert out == generate_dataset(make_synth_dataset(10, 1), 60, bootstrap=True, rng_seed=2)


def test_backend_failure_names_query():
    def broken(query, index):
        if index == 1:
            raise TransportError("down")
        return [pair("increases at the end", index)]

    with pytest.raises(GenerationError, match="query 1"):
        generate_dataset(make_synth_dataset(3, 0), 5, backend=broken, samples_per_query=1)


def test_query_demo_cap():
    with pytest.raises(ParameterError):
        GenerationQuery([pair("x")] * (MAX_DEMOS + 1))


def test_inject_mispairs():
    data = make_synth_dataset(50, 3, annotations=2)
    same, idx = inject_mispairs(data, 0.0, 0)
    assert same == data and idx == set()
    noisy, idx = inject_mispairs(data, 0.1, 0)
    assert len(idx) == 10
    for i, (a, b) in enumerate(zip(data, noisy)):
        if i in idx:
            assert a.series == b.series and infer_pattern(a.caption) != infer_pattern(b.caption)
        else:
            assert a == b
    one = [pair("increases at the start", s) for s in range(10)]
    with pytest.raises(InjectionError):
        inject_mispairs(one, 0.1, 0)


def test_duplicate_rate_examples():
    base = [pair(f"caption {i}", i) for i in range(8)]
    data = base + [base[0], base[3]]
    assert duplicate_rate(data) == pytest.approx(20.0)
    assert duplicate_rate(base) == 0.0
    assert duplicate_rate([]) == 0.0
    assert duplicate_rate(list(reversed(data))) == duplicate_rate(data)
