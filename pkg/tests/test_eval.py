import random

import pytest

from active_look.errors import (
    EmptyRecordSet,
    JoinFailure,
    MissingGroundTruth,
    UnpairedImage,
)
from active_look.evalmetrics import (
    EvalRecord,
    SynonymMap,
    chair,
    mme_scores,
    pope_metrics,
    scale_bin,
    split_by_scale,
    trigger_report,
)


def rec(i, pred, answer, **kw):
    return EvalRecord(id=str(i), prediction=pred, answer=answer, **kw)


class TestPope:
    def test_hand_confusion_matrix(self):
        records = (
            [rec(f"tp{i}", "yes", "yes") for i in range(3)]
            + [rec("fp", "yes", "no")]
            + [rec("fn", "no", "yes")]
            + [rec(f"tn{i}", "no", "no") for i in range(5)]
        )
        m = pope_metrics(records)
        assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 1, 5)
        assert m.accuracy == pytest.approx(0.8)
        assert m.precision == pytest.approx(0.75)
        assert m.recall == pytest.approx(0.75)
        assert m.f1 == pytest.approx(0.75)

    def test_all_correct(self):
        records = [rec(1, "yes", "yes"), rec(2, "no", "no")]
        m = pope_metrics(records)
        assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_zero_denominator_flagged(self):
        m = pope_metrics([rec(1, "no", "no")])
        assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
        assert set(m.zero_denominator) == {"precision", "recall", "f1"}

    def test_unparseable_counts_as_wrong(self):
        m = pope_metrics([rec(1, "hmm", "yes"), rec(2, "dunno", "no")])
        assert m.accuracy == 0.0
        assert m.fn == 1 and m.fp == 1

    def test_parses_verbose_predictions(self):
        m = pope_metrics([rec(1, "Yes (Rule 2: confirmed green box)", "yes")])
        assert m.accuracy == 1.0

    def test_empty_rejected(self):
        with pytest.raises(EmptyRecordSet):
            pope_metrics([])

    def test_f1_identity(self):
        rng = random.Random(3)
        records = [
            rec(i, rng.choice(["yes", "no"]), rng.choice(["yes", "no"])) for i in range(200)
        ]
        m = pope_metrics(records)
        if m.precision + m.recall > 0:
            assert m.f1 == pytest.approx(
                2 * m.precision * m.recall / (m.precision + m.recall), abs=1e-12
            )

    def test_order_invariance(self):
        rng = random.Random(4)
        records = [
            rec(i, rng.choice(["yes", "no"]), rng.choice(["yes", "no"])) for i in range(50)
        ]
        shuffled = records[:]
        rng.shuffle(shuffled)
        assert pope_metrics(records) == pope_metrics(shuffled)


def mme_rec(i, pred, answer, image, category="existence"):
    return EvalRecord(
        id=str(i), prediction=pred, answer=answer, image_id=image, category=category
    )


class TestMME:
    def test_perfect_pair_scores_200(self):
        records = [
            mme_rec(1, "yes", "yes", "img1"),
            mme_rec(2, "no", "no", "img1"),
            mme_rec(3, "yes", "yes", "img2"),
            mme_rec(4, "no", "no", "img2"),
        ]
        score = mme_scores(records)["existence"]
        assert score.accuracy == 1.0 and score.accuracy_plus == 1.0 and score.score == 200.0

    def test_three_of_four_with_shared_image_error(self):
        records = [
            mme_rec(1, "yes", "yes", "img1"),
            mme_rec(2, "no", "no", "img1"),
            mme_rec(3, "yes", "yes", "img2"),
            mme_rec(4, "yes", "no", "img2"),
        ]
        score = mme_scores(records)["existence"]
        assert score.accuracy == pytest.approx(0.75)
        assert score.accuracy_plus == pytest.approx(0.5)
        assert score.score == pytest.approx(125.0)

    def test_all_wrong_scores_zero(self):
        records = [
            mme_rec(1, "no", "yes", "img1"),
            mme_rec(2, "yes", "no", "img1"),
        ]
        score = mme_scores(records)["existence"]
        assert score.score == 0.0

    def test_acc_plus_never_exceeds_acc(self):
        rng = random.Random(9)
        records = []
        for img in range(20):
            category = rng.choice(["existence", "count"])
            for q in range(2):
                records.append(
                    mme_rec(
                        f"{img}_{q}",
                        rng.choice(["yes", "no"]),
                        rng.choice(["yes", "no"]),
                        f"img{img}",
                        category=category,
                    )
                )
        for score in mme_scores(records).values():
            assert score.accuracy_plus <= score.accuracy + 1e-12
            assert 0.0 <= score.score <= 200.0

    def test_unpaired_image_rejected(self):
        with pytest.raises(UnpairedImage):
            mme_scores([mme_rec(1, "yes", "yes", "img1")])

    def test_strict_parse_mode(self):
        records = [
            mme_rec(1, "Yes", "yes", "img1"),
            mme_rec(2, "no way, not at all", "no", "img1"),
        ]
        paired = mme_scores(records, plus_mode="paired")["existence"]
        strict = mme_scores(records, plus_mode="strict_parse")["existence"]
        assert paired.accuracy_plus == 1.0  # both parse correct
        assert strict.accuracy_plus == 0.5  # verbose reply is not strictly formatted


SYNONYMS = SynonymMap.from_mapping({"puppy": "dog", "kitten": "cat", "automobile": "car"})


class TestChair:
    def test_half_captions_hallucinated(self):
        records = [
            EvalRecord(id="1", prediction="a dog on grass", image_id="i1"),
            EvalRecord(id="2", prediction="a cat sits here", image_id="i2"),
        ]
        gt = {"i1": ["dog"], "i2": ["dog"]}
        result = chair(records, gt, SYNONYMS)
        assert result.chair_s == pytest.approx(0.5)

    def test_mention_rate(self):
        records = [
            EvalRecord(id="1", prediction="a dog and a cat and a car", image_id="i1"),
            EvalRecord(id="2", prediction="a dog and a car", image_id="i2"),
        ]
        gt = {"i1": ["dog", "cat", "car"], "i2": ["dog"]}
        result = chair(records, gt, SYNONYMS)
        assert result.n_mentions == 5
        assert result.n_hallucinated_mentions == 1
        assert result.chair_i == pytest.approx(0.2)

    def test_synonyms_collapse_to_one_category(self):
        records = [EvalRecord(id="1", prediction="a dog and a puppy", image_id="i1")]
        result = chair(records, {"i1": ["dog"]}, SYNONYMS)
        assert result.n_mentions == 1
        assert result.n_hallucinated_mentions == 0
        assert result.recall == 1.0

    def test_bigram_lookup(self):
        syn = SynonymMap.from_mapping({"baseball bat": "baseball bat"})
        records = [EvalRecord(id="1", prediction="a baseball bat on the field", image_id="i1")]
        result = chair(records, {"i1": ["baseball bat"]}, syn)
        assert result.n_mentions == 1 and result.chair_i == 0.0

    def test_missing_ground_truth(self):
        with pytest.raises(MissingGroundTruth):
            chair([EvalRecord(id="1", prediction="a dog", image_id="zz")], {"i1": ["dog"]}, SYNONYMS)

    def test_removing_hallucination_never_increases_metrics(self):
        gt = {"i1": ["dog"]}
        with_bad = chair(
            [EvalRecord(id="1", prediction="a dog and a cat", image_id="i1")], gt, SYNONYMS
        )
        without = chair(
            [EvalRecord(id="1", prediction="a dog", image_id="i1")], gt, SYNONYMS
        )
        assert without.chair_s <= with_bad.chair_s
        assert without.chair_i <= with_bad.chair_i


class TestScaleBin:
    @pytest.mark.parametrize(
        "a_rel,expected",
        [
            (0.0, "small"),
            (0.05, "small"),
            (0.099999, "small"),
            (0.10, "medium"),
            (0.2, "medium"),
            (0.30, "medium"),
            (0.300001, "large"),
            (0.31, "large"),
            (1.0, "large"),
        ],
    )
    def test_boundaries(self, a_rel, expected):
        assert scale_bin(a_rel) == expected

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            scale_bin(1.2)

    def test_split_by_scale_drops_missing(self):
        records = [
            rec(1, "yes", "yes", a_rel=0.05),
            rec(2, "yes", "yes", a_rel=0.2),
            rec(3, "yes", "yes"),
        ]
        groups = split_by_scale(records)
        assert set(groups) == {"small", "medium"}


class TestTriggerReport:
    def _trace(self, item_id, gamma, tau=0.6):
        return {
            "item_id": item_id,
            "partition": {"gamma": gamma, "tau_effective": tau},
        }

    def test_all_low_all_correct(self):
        traces = [self._trace(str(i), 0.0) for i in range(4)]
        records = [rec(i, "yes", "yes") for i in range(4)]
        rows = trigger_report(traces, records)
        low = next(r for r in rows if r.partition == "low")
        high = next(r for r in rows if r.partition == "high")
        assert low.sample_ratio == 1.0 and low.error_rate == 0.0
        assert high.sample_ratio == 0.0

    def test_hand_counted_split(self):
        traces = [self._trace(str(i), 1.0) for i in range(4)] + [
            self._trace(str(i), 0.0) for i in range(4, 10)
        ]
        records = [rec(0, "no", "yes"), rec(1, "no", "yes")] + [
            rec(i, "yes", "yes") for i in range(2, 10)
        ]
        rows = {r.partition: r for r in trigger_report(traces, records)}
        assert rows["low"].sample_ratio == pytest.approx(0.6)
        assert rows["low"].error_rate == 0.0
        assert rows["high"].sample_ratio == pytest.approx(0.4)
        assert rows["high"].error_rate == pytest.approx(0.5)
        assert rows["low"].sample_ratio + rows["high"].sample_ratio == pytest.approx(1.0)

    def test_join_failure(self):
        with pytest.raises(JoinFailure):
            trigger_report([self._trace("missing", 0.0)], [rec(1, "yes", "yes")])
