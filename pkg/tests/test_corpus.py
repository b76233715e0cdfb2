import numpy as np
import pytest

from chargenet import corpus as cp
from chargenet.corpus import (
    CaseRecord,
    ExtractionError,
    JudgementDoc,
    OrderingError,
    ParseError,
    RuleSet,
    SegmentationError,
    SyntheticSpec,
)
from chargenet.ndtensor import DomainError


def small_spec(**overrides):
    base = dict(n_charges=4, n_articles=7, core_keywords_per_charge=4,
                n_noise_tokens=10, train_size=40, valid_size=10, test_size=10, seed=11)
    base.update(overrides)
    return SyntheticSpec(**base)


def rules_for(corpus):
    return RuleSet(charge_list=list(corpus.charge_list))


class TestSegment:
    def doc(self, ok=True, swap=False):
        body = ("某法院判决书。经审理查明:某日发生盗窃。"
                + ("本院认为,依照《中华人民共和国刑法》第二百六十四条之规定。" if ok else "")
                + "判决如下:被告人犯盗窃罪。")
        if swap:
            body = body.replace("本院认为", "@@@").replace("判决如下", "本院认为").replace(
                "@@@", "判决如下")
        return JudgementDoc(body)

    def test_three_segments(self):
        fact, view, dec = cp.segment(self.doc(), RuleSet())
        assert fact.startswith("经审理查明") and "盗窃" in fact
        assert view.startswith("本院认为")
        assert dec.startswith("判决如下")

    def test_missing_view_indicator(self):
        with pytest.raises(SegmentationError, match="court view"):
            cp.segment(self.doc(ok=False), RuleSet())

    def test_out_of_order(self):
        with pytest.raises(OrderingError):
            cp.segment(self.doc(swap=True), RuleSet())


class TestNumerals:
    def test_bare_ten(self):
        assert cp.chinese_numeral_to_int("十") == 10

    def test_positional(self):
        assert cp.chinese_numeral_to_int("二百三十四") == 234

    def test_zero_placeholder(self):
        assert cp.chinese_numeral_to_int("三百零二") == 302

    def test_arabic_passthrough(self):
        assert cp.chinese_numeral_to_int("133") == 133

    def test_liang_reads_as_two(self):
        assert cp.chinese_numeral_to_int("两百") == 200

    def test_malformed(self):
        for bad in ("", "一二", "条", "2三"):
            with pytest.raises(ParseError):
                cp.chinese_numeral_to_int(bad)

    def test_agrees_with_independent_writer_1_to_999(self):
        for n in range(1, 1000):
            written = cp.int_to_chinese_numeral(n)
            assert cp.chinese_numeral_to_int(written) == n, (n, written)


class TestExtractArticles:
    def test_simple_reference(self):
        out = cp.extract_articles("依照第二百三十四条之规定", RuleSet())
        assert out == [234]

    def test_sub_clause(self):
        out = cp.extract_articles("第一百三十三条之一", RuleSet())
        assert out == [(133, 1)]

    def test_no_mention(self):
        assert cp.extract_articles("没有提到任何条文", RuleSet()) == []

    def test_enumeration_splits(self):
        out = cp.extract_articles("依照第二百三十二、二百三十四条的规定", RuleSet())
        assert out == [232, 234]

    def test_duplicates_removed_order_stable(self):
        text = "第五条和第三条还有第五条"
        assert cp.extract_articles(text, RuleSet()) == [5, 3]

    def test_arabic_digits(self):
        assert cp.extract_articles("依照第264条之规定", RuleSet()) == [264]


class TestExtractCharges:
    def test_single_charge(self):
        got = cp.extract_charges("被告人犯盗窃罪,判处拘役。", ["盗窃", "抢劫"])
        assert got == {"盗窃"}

    def test_multiple_charges(self):
        got = cp.extract_charges("犯盗窃罪、犯抢劫罪", ["盗窃", "抢劫"])
        assert got == {"盗窃", "抢劫"}

    def test_longest_match_wins(self):
        got = cp.extract_charges("犯故意伤害罪", ["故意伤害", "故意伤害罪", "伤害"])
        assert got == {"故意伤害罪"}

    def test_empty_result_is_error(self):
        with pytest.raises(ExtractionError):
            cp.extract_charges("无罪释放", ["盗窃"])


class TestMaskCharges:
    def test_no_charge_names_unchanged(self):
        text = "某日被告人取走财物。"
        assert cp.mask_charges(text, ["盗窃"]) == text

    def test_single_occurrence_masked(self):
        out = cp.mask_charges("涉嫌盗窃被拘留", ["盗窃"])
        assert out == f"涉嫌{cp.CHARGE_MASK}被拘留"

    def test_longest_match_and_postcondition(self):
        rng = np.random.default_rng(0)
        names = ["盗窃", "盗窃罪", "抢劫", "故意伤害"]
        pieces = ["某日", "被告人", "在", "商店"] + names
        for _ in range(100):
            text = "".join(rng.choice(pieces, rng.integers(1, 10)))
            masked = cp.mask_charges(text, names)
            for name in names:
                assert name not in masked

    def test_nested_names(self):
        out = cp.mask_charges("盗窃罪行严重", ["盗窃", "盗窃罪"])
        assert out == f"{cp.CHARGE_MASK}行严重"


class TestTokenizer:
    def test_sentences_and_tokens(self):
        sents = cp.simple_tokenize("a b c。d e!f g")
        assert [[t for t, _ in s] for s in sents] == [["a", "b", "c"], ["d", "e"], ["f", "g"]]

    def test_pos_tag_constant(self):
        sents = cp.simple_tokenize("x y")
        assert all(pos == "x" for s in sents for _, pos in s)


class TestSyntheticGenerator:
    def test_deterministic_under_seed(self):
        a = cp.generate_synthetic(small_spec())
        b = cp.generate_synthetic(small_spec())
        assert a.charge_list == b.charge_list
        assert a.article_db == b.article_db
        for ca, cb in zip(a.train + a.valid + a.test, b.train + b.valid + b.test):
            assert ca.fact == cb.fact
            assert ca.gold_charges == cb.gold_charges
            assert ca.gold_articles == cb.gold_articles

    def test_sizes_and_invariants(self):
        corpus = cp.generate_synthetic(small_spec())
        assert (len(corpus.train), len(corpus.valid), len(corpus.test)) == (40, 10, 10)
        assert len(corpus.article_db) == 7
        for charge, arts in corpus.charge_articles.items():
            assert 1 <= len(arts) <= 3
        for case in corpus.train:
            assert case.gold_charges <= set(corpus.charge_list)
            for a in case.gold_articles:
                assert a in corpus.article_db

    def test_disjoint_cores_single_case_separability(self):
        corpus = cp.generate_synthetic(small_spec(core_token_prob=1.0))
        prefixes = {c: f"c{i:02d}" for i, c in enumerate(corpus.charge_list)}
        for case in corpus.train:
            if len(case.gold_charges) > 1:
                continue  # multi-charge facts legitimately mix two cores
            (charge,) = case.gold_charges
            # zero noise + disjoint cores: a bag-of-words vote recovers the charge
            votes = {c: sum(t.startswith(p) for t in case.tokens())
                     for c, p in prefixes.items()}
            assert max(votes, key=votes.get) == charge
            assert sum(v > 0 for v in votes.values()) == 1

    def test_every_case_charge_leaves_a_core_keyword(self):
        corpus = cp.generate_synthetic(small_spec(core_token_prob=0.05))
        cores = {c: {f"c{i:02d}k{j}" for j in range(4)}
                 for i, c in enumerate(corpus.charge_list)}
        for case in corpus.train:
            toks = set(case.tokens())
            for charge in case.gold_charges:
                assert toks & cores[charge]

    def test_multi_charge_marginal_within_3_sigma(self):
        spec = small_spec(train_size=2000, multi_charge_prob=0.2, seed=3)
        corpus = cp.generate_synthetic(spec)
        n_multi = sum(len(c.gold_charges) > 1 for c in corpus.train)
        mean = 0.2 * 2000
        sigma = (2000 * 0.2 * 0.8) ** 0.5
        assert abs(n_multi - mean) <= 3 * sigma

    def test_invalid_spec_rejected(self):
        with pytest.raises(DomainError):
            cp.generate_synthetic(small_spec(train_size=-1))
        with pytest.raises(DomainError):
            cp.generate_synthetic(small_spec(n_articles=2))


class TestRenderRoundTrip:
    def test_segments_recover_case(self):
        corpus = cp.generate_synthetic(small_spec())
        rules = rules_for(corpus)
        for case in corpus.train[:50]:
            doc = cp.render_judgement(case, rules)
            rebuilt = cp.assemble_case(doc, rules)
            assert [[t for t, _ in s] for s in rebuilt.fact] == \
                   [[t for t, _ in s] for s in case.fact]
            assert rebuilt.gold_charges == case.gold_charges
            assert rebuilt.gold_articles == case.gold_articles

    def test_injected_charge_names_get_masked(self):
        corpus = cp.generate_synthetic(small_spec())
        rules = rules_for(corpus)
        case = corpus.train[0]
        doc = cp.render_judgement(case, rules, inject_charges=True)
        rebuilt = cp.assemble_case(doc, rules)
        toks = rebuilt.tokens()
        assert cp.CHARGE_MASK in toks
        for name in rules.charge_list:
            assert all(name not in t for t in toks)

    def test_sub_article_round_trip(self):
        case = CaseRecord([[("tok1", "n"), ("tok2", "n")]], {"盗窃"}, {(133, 1), 264})
        rules = RuleSet(charge_list=["盗窃"])
        doc = cp.render_judgement(case, rules)
        rebuilt = cp.assemble_case(doc, rules)
        assert rebuilt.gold_articles == {(133, 1), 264}


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        corpus = cp.generate_synthetic(small_spec())
        path = tmp_path / "train.jsonl"
        cp.save_dataset(path, corpus.train)
        loaded = cp.load_dataset(path)
        assert len(loaded) == len(corpus.train)
        for a, b in zip(corpus.train, loaded):
            assert a.fact == b.fact
            assert a.gold_charges == b.gold_charges
            assert a.gold_articles == b.gold_articles

    def test_empty_file_warns(self, tmp_path, caplog):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with caplog.at_level("WARNING"):
            assert cp.load_dataset(path) == []
        assert any("empty" in r.message for r in caplog.records)

    def test_truncated_record_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = ('{"fact": [[["a", "n"]]], "charges": ["x"], "articles": [1]}')
        path.write_text(good + "\n" + good[: len(good) // 2] + "\n")
        with pytest.raises(ParseError, match="line 2"):
            cp.load_dataset(path)

    def test_article_db_and_charge_list_round_trip(self, tmp_path):
        corpus = cp.generate_synthetic(small_spec())
        db_path = tmp_path / "articles.jsonl"
        cp.save_article_db(db_path, corpus.article_db)
        assert cp.load_article_db(db_path) == corpus.article_db
        cl_path = tmp_path / "charges.txt"
        cp.save_charge_list(cl_path, corpus.charge_list)
        assert cp.load_charge_list(cl_path) == corpus.charge_list

    def test_ruleset_round_trip(self, tmp_path):
        rules = RuleSet(charge_list=["盗窃", "抢劫"])
        path = tmp_path / "rules.json"
        cp.save_ruleset(path, rules)
        loaded = cp.load_ruleset(path)
        assert loaded == rules


class TestAssembleDataset:
    def make(self, charge, n):
        return [CaseRecord([[("t", "n")]], {charge}, {1}) for _ in range(n)]

    def test_min_count_filter(self):
        records = self.make("common", 10) + self.make("rare", 2)
        labeled, negatives, vocab = cp.assemble_dataset(records, min_charge_count=5)
        assert vocab == ["common"]
        assert len(labeled) == 10 and len(negatives) == 2
        assert all(r.gold_charges == {"common"} for r in labeled)

    def test_mixed_case_keeps_frequent_charge(self):
        records = self.make("common", 10)
        records.append(CaseRecord([[("t", "n")]], {"common", "rare"}, {1}))
        labeled, negatives, vocab = cp.assemble_dataset(records, min_charge_count=5)
        assert len(labeled) == 11 and not negatives
        assert labeled[-1].gold_charges == {"common"}
