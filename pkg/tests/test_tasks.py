from hypothesis import given
from hypothesis import strategies as st

from topodesign.tasks import (
    CATEGORIES,
    SyntheticTask,
    evaluate,
    extract_answer,
    generate_suite,
    parse_query,
)

T7 = SyntheticTask("compute 3+4", "arith_easy", "7", 0.2)


def test_evaluate_examples():
    assert evaluate("Answer: 7", T7) == 1.0
    assert evaluate("Answer: 8", T7) == 0.0
    assert evaluate("the result is 7\nAnswer: 7", T7) == 1.0
    assert evaluate("  answer :  7  ", T7) == 1.0
    assert evaluate("I think it is 7", T7) == 1.0
    assert evaluate("", T7) == 0.0


def test_case_folding():
    assert evaluate("Answer: b", SyntheticTask("q", "choice", "B", 0.5)) == 1.0


def test_extract_answer_prefers_last_answer_line():
    assert extract_answer("Answer: 1\nmore\nAnswer: 2\n") == "2"


def test_suite_deterministic_and_counts():
    a = generate_suite(3, {"arith_easy": 4, "choice": 2, "relay": 1, "arith_hard": 3})
    assert a == generate_suite(3, {"arith_easy": 4, "choice": 2, "relay": 1, "arith_hard": 3})
    assert sorted(t.category for t in a) == sorted(["arith_easy"] * 4 + ["choice"] * 2 + ["relay"] + ["arith_hard"] * 3)
    assert [t.category for t in a[:4]] == ["arith_easy", "arith_hard", "choice", "relay"]
    assert generate_suite(0, {}) == []


def test_easy_task_format():
    t = generate_suite(0, {"arith_easy": 1})[0]
    category, (a, b) = parse_query(t.query)
    assert category == "arith_easy" and t.ground_truth == str(a + b) and t.difficulty == 0.2
    assert parse_query("compute 3+4") == ("arith_easy", (3, 4))


@given(st.integers(0, 10_000), st.sampled_from(CATEGORIES))
def test_ground_truth_scores_one(seed, cat):
    for t in generate_suite(seed, {cat: 2}):
        assert t.ground_truth and evaluate(t.ground_truth, t) == 1.0
        assert parse_query(t.query)[0] == cat
        assert 0 <= t.difficulty <= 1


def test_hard_is_harder():
    easy = generate_suite(0, {"arith_easy": 1})[0]
    hard = generate_suite(0, {"arith_hard": 1})[0]
    assert hard.difficulty > easy.difficulty
