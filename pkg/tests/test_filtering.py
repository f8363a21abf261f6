import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from capdet.errors import (
    KTooLargeError,
    MissingItmScoreError,
    MissingMetricReportError,
    TTooLargeError,
)
from capdet.filtering import (
    DEFAULT_K,
    DEFAULT_T,
    SelectionSpec,
    rank_by_key,
    read_selection,
    select,
    summarize,
    summarize_ids,
    top_k_by_itm,
    write_selection,
)
from capdet.ingest import DatasetRecord
from capdet.metrics import MetricReport


def record(rid, caption="one two three", itm=None):
    return DatasetRecord(
        record_id=rid,
        image_path=f"images/{rid}.png",
        image_height=4,
        image_width=4,
        caption=caption,
        itm_score=itm,
    )


def five_record_fixture():
    """The hand-worked fixture: ITM .9..5, CD .01/.05/.03/.9/.9, lengths 10..50."""
    itms = {"a": 0.9, "b": 0.8, "c": 0.7, "d": 0.6, "e": 0.5}
    cds = {"a": 0.01, "b": 0.05, "c": 0.03, "d": 0.9, "e": 0.9}
    lengths = {"a": 10, "b": 20, "c": 30, "d": 40, "e": 50}
    records = [record(r, caption="w " * lengths[r], itm=itms[r]) for r in "abcde"]
    reports = [
        MetricReport(r, icr=0.5, aod=2.0, length=lengths[r], detailness=cds[r])
        for r in "abcde"
    ]
    return records, reports


class TestNamedStrategies:
    def test_full_selects_everything(self):
        records, _ = five_record_fixture()
        manifest = select(records, SelectionSpec("full", k=5, t=5))
        assert manifest.record_ids == ("a", "b", "c", "d", "e")

    def test_detailness_two_stage_hand_example(self):
        records, reports = five_record_fixture()
        manifest = select(records, SelectionSpec("detailness", k=3, t=2), reports)
        assert manifest.record_ids == ("b", "c")

    def test_itm_length_hand_example(self):
        records, _ = five_record_fixture()
        manifest = select(records, SelectionSpec("itm_length", k=3, t=2))
        assert manifest.record_ids == ("c", "b")

    def test_length_strategy(self):
        records, _ = five_record_fixture()
        manifest = select(records, SelectionSpec("length", k=5, t=2))
        assert manifest.record_ids == ("e", "d")

    def test_random_is_deterministic_per_seed(self):
        records, _ = five_record_fixture()
        spec = SelectionSpec("random", k=5, t=3, seed=7)
        first = select(records, spec)
        second = select(records, spec)
        assert first.record_ids == second.record_ids
        assert len(set(first.record_ids)) == 3

    def test_random_differs_across_seeds(self):
        records, _ = five_record_fixture()
        draws = {
            select(records, SelectionSpec("random", k=5, t=2, seed=s)).record_ids
            for s in range(12)
        }
        assert len(draws) > 1


class TestErrors:
    def test_missing_itm(self):
        records = [record("a", itm=0.5), record("b")]
        with pytest.raises(MissingItmScoreError, match="b"):
            select(records, SelectionSpec("itm_length", k=2, t=1))

    def test_detailness_needs_reports(self):
        records, _ = five_record_fixture()
        with pytest.raises(MissingMetricReportError):
            select(records, SelectionSpec("detailness", k=3, t=2))

    def test_detailness_needs_reports_for_pruned_set(self):
        records, reports = five_record_fixture()
        with pytest.raises(MissingMetricReportError, match="a"):
            select(records, SelectionSpec("detailness", k=3, t=2), reports[1:])

    def test_t_too_large(self):
        records, _ = five_record_fixture()
        with pytest.raises(TTooLargeError):
            select(records, SelectionSpec("random", k=5, t=6))
        with pytest.raises(TTooLargeError):
            select(records, SelectionSpec("detailness", k=2, t=3))

    def test_k_too_large(self):
        records, _ = five_record_fixture()
        with pytest.raises(KTooLargeError):
            select(records, SelectionSpec("itm_length", k=6, t=2))


class TestSummaries:
    def test_singleton(self):
        summary = summarize_ids(["a"], [MetricReport("a", 0.5, 2.0, 10, 0.1)])
        assert summary.avg_icr == 50.0
        assert summary.avg_aod == 2.0

    def test_two_record_mean(self):
        reports = [
            MetricReport("a", 0.2, 1.0, 5, 0.04),
            MetricReport("b", 0.8, 3.0, 15, 0.16),
        ]
        summary = summarize_ids(["a", "b"], reports)
        assert summary.avg_icr == 50.0
        assert summary.avg_aod == 2.0
        assert summary.avg_length == 10.0

    def test_matches_independent_recompute(self):
        records, reports = five_record_fixture()
        manifest = select(records, SelectionSpec("detailness", k=4, t=3), reports)
        summary = summarize(manifest, reports)
        chosen = [r for r in reports if r.record_id in manifest.record_ids]
        assert summary.count == len(chosen)
        assert summary.avg_icr == pytest.approx(100 * sum(r.icr for r in chosen) / len(chosen))
        assert summary.avg_length == pytest.approx(sum(r.length for r in chosen) / len(chosen))

    def test_missing_report(self):
        with pytest.raises(MissingMetricReportError):
            summarize_ids(["zz"], [])


class TestSerialization:
    def test_round_trip(self):
        records, reports = five_record_fixture()
        manifest = select(records, SelectionSpec("detailness", k=3, t=2), reports)
        parsed = read_selection(write_selection(manifest))
        assert parsed.record_ids == manifest.record_ids
        assert parsed.spec == manifest.spec
        assert parsed.summary == manifest.summary

    def test_stable_bytes(self):
        records, reports = five_record_fixture()
        spec = SelectionSpec("detailness", k=3, t=2)
        a = write_selection(select(records, spec, reports))
        b = write_selection(select(list(reversed(records)), spec, reports))
        assert a == b

    def test_summary_can_be_omitted(self):
        records, reports = five_record_fixture()
        manifest = select(records, SelectionSpec("detailness", k=3, t=2), reports)
        data = write_selection(manifest, include_summary=False)
        assert b"summary" not in data
        assert read_selection(data).record_ids == manifest.record_ids


class TestComposableRanking:
    """Ablation-style compositions from the two primitives."""

    def test_itm_only(self):
        records, _ = five_record_fixture()
        assert top_k_by_itm(records, 2) == ["a", "b"]

    def test_coverage_only_ranking(self):
        records = [record(r, itm=0.5) for r in "ab"]
        reports = [
            MetricReport("a", 0.9, 1.0, 10, 0.09),
            MetricReport("b", 0.4, 5.0, 10, 0.2),
        ]
        assert rank_by_key(records, "icr", reports)[:1] == ["a"]
        assert rank_by_key(records, "aod", reports)[:1] == ["b"]

    def test_unnormalized_product(self):
        records = [record(r, itm=0.5) for r in "ab"]
        reports = [
            MetricReport("a", 0.9, 1.0, 100, 0.009),
            MetricReport("b", 0.4, 2.0, 5, 0.16),
        ]
        assert rank_by_key(records, "icr_aod", reports) == ["a", "b"]
        assert rank_by_key(records, "detailness", reports) == ["b", "a"]

    def test_two_stage_composition_matches_select(self):
        records, reports = five_record_fixture()
        pruned = top_k_by_itm(records, 3)
        composed = rank_by_key(records, "detailness", reports, within=pruned)[:2]
        manifest = select(records, SelectionSpec("detailness", k=3, t=2), reports)
        assert tuple(composed) == manifest.record_ids


# Property-based invariants. Values are quantized to keep the claims in
# exact-arithmetic territory.


@st.composite
def scored_fixtures(draw):
    n = draw(st.integers(3, 20))
    rng = random.Random(draw(st.integers(0, 2**32 - 1)))
    records = []
    reports = []
    for i in range(n):
        rid = f"r{i:03d}"
        length = rng.randint(1, 40)
        records.append(
            record(rid, caption="w " * length, itm=rng.randint(0, 1000) / 1000)
        )
        icr = rng.randint(0, 1000) / 1000
        aod = rng.randint(0, 50) / 10
        reports.append(
            MetricReport(rid, icr=icr, aod=aod, length=length, detailness=icr * aod / length)
        )
    k = draw(st.integers(1, n))
    t = draw(st.integers(1, k))
    return records, reports, k, t


@given(scored_fixtures())
def test_detailness_output_contained_in_top_k(fixture):
    records, reports, k, t = fixture
    manifest = select(records, SelectionSpec("detailness", k=k, t=t), reports)
    assert set(manifest.record_ids) <= set(top_k_by_itm(records, k))


@given(scored_fixtures(), st.integers(1, 50), st.integers(-100, 100))
def test_itm_affine_rescale_keeps_output(fixture, scale, shift):
    records, reports, k, t = fixture
    rescaled = [
        DatasetRecord(
            record_id=r.record_id,
            image_path=r.image_path,
            image_height=r.image_height,
            image_width=r.image_width,
            caption=r.caption,
            itm_score=scale * r.itm_score + shift,
        )
        for r in records
    ]
    for strategy in ("itm_length", "detailness"):
        spec = SelectionSpec(strategy, k=k, t=t)
        assert (
            select(records, spec, reports).record_ids
            == select(rescaled, spec, reports).record_ids
        )


@given(scored_fixtures())
def test_icr_rescale_keeps_detailness_output(fixture):
    records, reports, k, t = fixture
    scaled = [
        MetricReport(
            r.record_id,
            icr=r.icr * 100,
            aod=r.aod,
            length=r.length,
            detailness=None if r.detailness is None else r.detailness * 100,
        )
        for r in reports
    ]
    spec = SelectionSpec("detailness", k=k, t=t)
    assert (
        select(records, spec, reports).record_ids
        == select(records, spec, scaled).record_ids
    )


@given(scored_fixtures())
def test_length_strategy_dominance(fixture):
    records, _, _, t = fixture
    manifest = select(records, SelectionSpec("length", t=t))
    lengths = {r.record_id: len(r.caption.split()) for r in records}
    selected = set(manifest.record_ids)
    worst_selected = min(lengths[r] for r in selected)
    best_rejected = max(
        (lengths[r] for r in lengths if r not in selected), default=-1
    )
    assert worst_selected >= best_rejected


@given(scored_fixtures(), st.randoms(use_true_random=False))
def test_permutation_invariance(fixture, shuffler):
    records, reports, k, t = fixture
    shuffled = list(records)
    shuffler.shuffle(shuffled)
    for strategy in ("full", "random", "length", "itm_length", "detailness"):
        spec = SelectionSpec(strategy, k=k, t=t)
        assert (
            select(records, spec, reports).record_ids
            == select(shuffled, spec, reports).record_ids
        )


def test_undefined_detailness_ranks_last():
    records = [record(r, itm=0.5) for r in "ab"]
    reports = [
        MetricReport("a", 0.0, 0.0, 0, None),
        MetricReport("b", 0.1, 0.1, 10, 0.001),
    ]
    assert rank_by_key(records, "detailness", reports) == ["b", "a"]


def test_defaults_match_published_protocol():
    assert DEFAULT_K == 30_000
    assert DEFAULT_T == 20_000
    spec = SelectionSpec("detailness")
    assert (spec.k, spec.t, spec.seed) == (30_000, 20_000, 0)
