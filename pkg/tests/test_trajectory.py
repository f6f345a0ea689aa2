"""Metric suite unit tests: worked examples and structural invariants."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divtraj import (
    Context,
    Dataset,
    Example,
    SampleSet,
    ade,
    apd,
    asd_fsd,
    build_multimodal_gt,
    evaluate_sample_sets,
    fde,
    mm_metrics,
    traj_distance,
)


def make_samples(*trajs):
    return SampleSet(samples=np.stack([np.asarray(t, dtype=float) for t in trajs]))


ZERO32 = np.zeros((3, 2))
ONES32 = np.ones((3, 2))


class TestTrajDistance:
    def test_identity(self):
        a = np.arange(6.0).reshape(3, 2)
        assert traj_distance(a, a) == 0.0

    def test_all_ones_offset(self):
        assert traj_distance(ZERO32, ONES32) == pytest.approx(np.sqrt(6.0))

    def test_final_step_3_4_5(self):
        b = ZERO32.copy()
        b[-1] = (3.0, 4.0)
        assert traj_distance(ZERO32, b) == pytest.approx(5.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            traj_distance(ZERO32, np.zeros((2, 2)))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            traj_distance(np.array([[np.nan, 0.0]]), np.zeros((1, 2)))


class TestAde:
    def test_exact_sample(self):
        gt = np.arange(6.0).reshape(3, 2)
        assert ade(make_samples(gt), gt) == 0.0

    def test_unit_offset_every_step(self):
        gt = ZERO32
        sample = gt + np.array([1.0, 0.0])
        assert ade(make_samples(sample), gt) == pytest.approx(1.0)

    def test_min_of_two_offsets(self):
        gt = ZERO32
        s1 = gt + np.array([0.0, 1.0])
        s2 = gt + np.array([0.0, 2.0])
        assert ade(make_samples(s1, s2), gt) == pytest.approx(1.0)

    def test_empty_sample_set_rejected(self):
        with pytest.raises(ValueError):
            SampleSet(samples=np.zeros((0, 3, 2)))


class TestFde:
    def test_exact_sample(self):
        gt = np.arange(6.0).reshape(3, 2)
        assert fde(make_samples(gt), gt) == 0.0

    def test_final_offset(self):
        s = ZERO32.copy()
        s[-1] = (0.0, 3.0)
        assert fde(make_samples(s), ZERO32) == pytest.approx(3.0)

    def test_min_of_two(self):
        s1 = ZERO32.copy()
        s1[-1] = (2.0, 0.0)
        s2 = ZERO32.copy()
        s2[-1] = (0.0, 0.5)
        assert fde(make_samples(s1, s2), ZERO32) == pytest.approx(0.5)


class TestApd:
    def test_identical_pair(self):
        assert apd(make_samples(ONES32, ONES32)) == 0.0

    def test_pair_distance(self):
        d = traj_distance(ZERO32, ONES32)
        assert apd(make_samples(ZERO32, ONES32)) == pytest.approx(d)

    def test_three_collinear(self):
        # gaps d, d, 2d counted twice each -> 8d / 6 = 4d/3
        a, b, c = ZERO32, ZERO32 + 1.0, ZERO32 + 2.0
        d = traj_distance(a, b)
        assert apd(make_samples(a, b, c)) == pytest.approx(4.0 * d / 3.0)

    def test_single_sample_rejected(self):
        with pytest.raises(ValueError):
            apd(make_samples(ZERO32))


class TestAsdFsd:
    def test_all_identical(self):
        assert asd_fsd(make_samples(ONES32, ONES32, ONES32)) == (0.0, 0.0)

    def test_pair_constant_offset(self):
        off = np.array([0.6, 0.8])  # norm 1 at every step
        vals = asd_fsd(make_samples(ZERO32, ZERO32 + off))
        assert vals[0] == pytest.approx(1.0)
        assert vals[1] == pytest.approx(1.0)

    def test_duplicate_contributes_zero(self):
        far = ZERO32 + 10.0
        asd_val, fsd_val = asd_fsd(make_samples(far, ZERO32, ZERO32))
        # samples 2 and 3 coincide: their nearest-other distances are 0
        per_step = np.linalg.norm(far - ZERO32, axis=1).mean()
        assert asd_val == pytest.approx(per_step / 3.0)
        assert fsd_val == pytest.approx(np.linalg.norm(far[-1]) / 3.0)

    def test_k1_rejected(self):
        with pytest.raises(ValueError):
            asd_fsd(make_samples(ZERO32))


def _dataset_from_contexts(pasts, futures):
    examples = [
        Example(context=Context(past=p), future=f, id=i)
        for i, (p, f) in enumerate(zip(pasts, futures))
    ]
    return Dataset(examples=tuple(examples))


class TestBuildMultimodalGt:
    def test_eps_zero_distinct_contexts(self):
        pasts = [np.full((2, 2), float(i)) for i in range(3)]
        futures = [np.full((3, 2), 10.0 + i) for i in range(3)]
        ds = _dataset_from_contexts(pasts, futures)
        groups = build_multimodal_gt(ds, 0.0)
        for i in range(3):
            assert len(groups[i]) == 1
            np.testing.assert_array_equal(groups[i][0], futures[i])

    def test_identical_contexts_share_everything(self):
        pasts = [np.zeros((2, 2))] * 3
        futures = [np.full((3, 2), float(i)) for i in range(3)]
        groups = build_multimodal_gt(_dataset_from_contexts(pasts, futures), 0.0)
        for i in range(3):
            assert len(groups[i]) == 3

    def test_pairwise_to_anchor_not_transitive(self):
        # contexts on a line at 0, 1, 2 with eps = 1.5: a<->b, b<->c but not a<->c
        pasts = [np.full((2, 2), 0.0), np.full((2, 2), 0.5), np.full((2, 2), 1.0)]
        futures = [np.full((3, 2), float(i)) for i in range(3)]
        ds = _dataset_from_contexts(pasts, futures)
        eps = np.linalg.norm(pasts[1] - pasts[0]) * 1.2  # joins adjacent only
        groups = build_multimodal_gt(ds, eps)
        assert len(groups[0]) == 2 and len(groups[1]) == 3 and len(groups[2]) == 2

    def test_negative_eps_rejected(self):
        ds = _dataset_from_contexts([np.zeros((2, 2))], [np.zeros((3, 2))])
        with pytest.raises(ValueError):
            build_multimodal_gt(ds, -0.1)


class TestMmMetrics:
    def test_singleton_reduces_to_unimodal(self):
        gt = np.arange(6.0).reshape(3, 2)
        ss = make_samples(gt + 0.5, gt + 1.0)
        assert mm_metrics(ss, [gt]) == (ade(ss, gt), fde(ss, gt))

    def test_duplicate_gt_unchanged(self):
        gt = np.arange(6.0).reshape(3, 2)
        ss = make_samples(gt + 0.5)
        assert mm_metrics(ss, [gt, gt]) == (ade(ss, gt), fde(ss, gt))

    def test_two_gts_average(self):
        gt = ZERO32
        gt2 = gt + np.array([1.0, 0.0])
        ss = make_samples(gt)
        mmade, mmfde = mm_metrics(ss, [gt, gt2])
        assert mmade == pytest.approx(0.5)
        assert mmfde == pytest.approx(0.5)

    def test_empty_gt_set_rejected(self):
        with pytest.raises(ValueError):
            mm_metrics(make_samples(ZERO32), [])


class TestInvariants:
    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        samples = rng.normal(size=(5, 4, 3))
        gt = rng.normal(size=(4, 3))
        perm = rng.permutation(5)
        a, b = SampleSet(samples=samples), SampleSet(samples=samples[perm])
        assert ade(a, gt) == pytest.approx(ade(b, gt), rel=1e-12)
        assert fde(a, gt) == pytest.approx(fde(b, gt), rel=1e-12)
        assert apd(a) == pytest.approx(apd(b), rel=1e-12)
        assert asd_fsd(a) == pytest.approx(asd_fsd(b), rel=1e-12)

    def test_appending_samples_never_increases_error_metrics(self):
        rng = np.random.default_rng(7)
        gt = rng.normal(size=(4, 2))
        samples = rng.normal(size=(8, 4, 2))
        gts = [gt, gt + 0.3]
        prev = (np.inf, np.inf, np.inf, np.inf)
        for k in range(1, 9):
            ss = SampleSet(samples=samples[:k])
            mmade, mmfde = mm_metrics(ss, gts)
            cur = (ade(ss, gt), fde(ss, gt), mmade, mmfde)
            assert all(c <= p + 1e-12 for c, p in zip(cur, prev))
            prev = cur

    def test_diversity_metrics_zero_iff_coincident(self):
        rng = np.random.default_rng(3)
        base = rng.normal(size=(4, 2))
        ss = SampleSet(samples=np.stack([base] * 4))
        asd_val, fsd_val = asd_fsd(ss)
        assert apd(ss) < 1e-12 and asd_val < 1e-12 and fsd_val < 1e-12
        ss2 = SampleSet(samples=np.stack([base, base + 1e-3, base, base]))
        assert apd(ss2) > 1e-12

    def test_rigid_translation_invariance(self):
        rng = np.random.default_rng(11)
        samples = rng.normal(size=(6, 5, 2))
        gt = rng.normal(size=(5, 2))
        gt2 = rng.normal(size=(5, 2))
        shift = np.array([12.3, -4.5])
        a = SampleSet(samples=samples)
        b = SampleSet(samples=samples + shift)
        before = (
            apd(a),
            *asd_fsd(a),
            ade(a, gt),
            fde(a, gt),
            *mm_metrics(a, [gt, gt2]),
        )
        after = (
            apd(b),
            *asd_fsd(b),
            ade(b, gt + shift),
            fde(b, gt + shift),
            *mm_metrics(b, [gt + shift, gt2 + shift]),
        )
        np.testing.assert_allclose(after, before, rtol=1e-10)


class TestEvaluateSampleSets:
    def test_table_and_means(self):
        rng = np.random.default_rng(5)
        pasts = [rng.normal(size=(2, 2)) for _ in range(4)]
        futures = [rng.normal(size=(3, 2)) for _ in range(4)]
        ds = _dataset_from_contexts(pasts, futures)
        sets = {
            ex.id: SampleSet(samples=np.stack([ex.future, ex.future + 0.1]), context_id=ex.id)
            for ex in ds.examples
        }
        report = evaluate_sample_sets(ds, sets, eps=0.0)
        assert len(report.per_example) == 4
        assert report.means["ade"] == pytest.approx(0.0)
        # eps = 0 with distinct contexts: multi-modal reduces to unimodal
        assert report.means["mmade"] == pytest.approx(report.means["ade"])
        assert report.means["mmfde"] == pytest.approx(report.means["fde"])

    def test_missing_ids_rejected(self):
        ds = _dataset_from_contexts([np.zeros((2, 2))], [np.zeros((3, 2))])
        with pytest.raises(ValueError, match="missing"):
            evaluate_sample_sets(ds, {}, eps=0.0)
