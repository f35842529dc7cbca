import pytest

from aspectqa import simulate
from aspectqa.corpus import Book
from aspectqa.evaluation import (
    HEADERS,
    AggregateRow,
    EvalRecord,
    GapError,
    aggregate,
    answer_qa,
    compare_generic_to_reference,
    evaluate_method,
    leaked_windows,
    render_csv,
    render_table,
)
from aspectqa.gateway import BackendError
from aspectqa.metrics import HashTokenEncoder, ScoreTriple, Scorer, tokenize
from aspectqa.qagen import DEFAULT_ASPECTS, AspectAssignment, QAPair
from aspectqa.summarizers import GENERIC, Summary

BOOK_TEXT = (
    "The lighthouse keeper Ada kept a ledger of every ship. One winter night a strange vessel "
    "signalled with a green lamp and Ada rowed out alone to meet it, against all advice."
)


def summary(book="b", aspect="Romance", method="hier", text="Ada meets a stranger at sea."):
    from aspectqa.summarizers import count_tokens

    return Summary(book, aspect, method, text, count_tokens(text))


def qa(i, book="b"):
    return QAPair(f"{book}-q{i:03d}", book, f"What does Ada do on night {i}?", "She rows out to the ship.",
                  ("sea",), ("ADA", "SHIP"), 10)


def test_scripted_answer(make_gateway):
    s, q = summary(), qa(0)
    gw = make_gateway({f"answer::hier/{q.id}/Romance": "X"})
    assert answer_qa(s, q, gw) == "X"


def test_empty_summary_rejected_before_call(make_gateway):
    gw = make_gateway({})
    with pytest.raises(ValueError):
        answer_qa(Summary("b", "Romance", "hier", "", 0), qa(0), gw)
    assert gw.stats["chat_calls"] == 0


def test_prompt_has_summary_and_question_but_no_book(mock_gateway):
    s, q = summary(), qa(0)
    answer_qa(s, q, mock_gateway)
    prompt = mock_gateway.chat_backend.requests[0].user
    assert s.text in prompt and q.question in prompt
    assert leaked_windows(prompt, BOOK_TEXT, [s.text, q.question]) == []


def test_leak_detector_fires():
    prompt = "Summary: x\n" + BOOK_TEXT[10:90]
    assert leaked_windows(prompt, BOOK_TEXT, ["x"])


def setup_eval(n_books, qas_per_aspect):
    books = [Book.from_text(f"b{i}", BOOK_TEXT) for i in range(n_books)]
    store, assignments, summaries = {}, {}, {}
    for b in books:
        qs = [qa(i, b.id) for i in range(5)]
        store.update({q.id: q for q in qs})
        assignments[b.id] = [
            AspectAssignment(a, [(q.id, 0.5) for q in qs[: qas_per_aspect(a)]]) for a in DEFAULT_ASPECTS
        ]
        for a in DEFAULT_ASPECTS:
            summaries[(b.id, a)] = summary(b.id, a)
    return books, store, assignments, summaries


def test_cardinality_two_books(mock_gateway):
    books, store, assignments, summaries = setup_eval(2, lambda a: 5)
    recs = evaluate_method("hier", books, DEFAULT_ASPECTS, store, summaries, assignments, mock_gateway,
                           Scorer(HashTokenEncoder()))
    assert len(recs) == 2 * 14 * 5


def test_aspect_with_three_qas(mock_gateway):
    books, store, assignments, summaries = setup_eval(1, lambda a: 3 if a == "Horror" else 5)
    recs = evaluate_method("inc", books, DEFAULT_ASPECTS, store, summaries, assignments, mock_gateway,
                           Scorer(HashTokenEncoder()))
    assert sum(r.aspect == "Horror" for r in recs) == 3 and len(recs) == 13 * 5 + 3


def test_rerun_identical(make_gateway):
    books, store, assignments, summaries = setup_eval(1, lambda a: 2)

    def run():
        gw = make_gateway(fallback=simulate.respond, concurrency=4)
        recs = evaluate_method("hier", books, DEFAULT_ASPECTS, store, summaries, assignments, gw,
                               Scorer(HashTokenEncoder()))
        return [r.to_dict() for r in recs]

    assert run() == run()


def test_gap_error_lists_pairs(mock_gateway):
    books, store, assignments, summaries = setup_eval(1, lambda a: 1)
    del summaries[("b0", "Poetry")]
    with pytest.raises(GapError) as ei:
        evaluate_method("hier", books, DEFAULT_ASPECTS, store, summaries, assignments, mock_gateway)
    assert ei.value.missing == [("b0", "Poetry")] and "b0/Poetry" in str(ei.value)


def test_backend_failure_marks_record(make_gateway):
    books, store, assignments, summaries = setup_eval(1, lambda a: 1)

    def fail(req):
        raise BackendError("gone", status=500)

    recs = evaluate_method("hier", books, ["Romance"], store, summaries, assignments, make_gateway(fallback=fail))
    assert recs[0].failed and recs[0].scores.rouge1 is None and "gone" in recs[0].error


def rec(book, aspect, r1, method="hier", failed=False):
    return EvalRecord(book, method, aspect, "q", "a", ScoreTriple(r1, r1, r1), failed=failed)


def test_mean_reported_as_percent():
    (row,) = aggregate([rec("b", "Romance", 0.2), rec("b", "Romance", 0.4)], "aspect")
    assert row.mean_rouge1 == pytest.approx(0.3)
    assert render_csv([row]).splitlines()[1].split(",")[2] == "30.00"


def test_single_record_and_failures_excluded():
    (row,) = aggregate([rec("b", "Romance", 0.7), rec("b", "Romance", None, failed=True)], "overall")
    assert row.mean_rouge1 == 0.7 and row.n == 1 and row.failures == 1


def test_size_bucket_join():
    small = Book.from_text("s", "word " * 100)
    mid = Book.from_text("m", "word " * 100_000)
    recs = [rec("s", "Romance", 0.1), rec("m", "Romance", 0.5), rec("m", "Horror", 0.3)]
    rows = aggregate(recs, "size_bucket", [small, mid])
    assert [(r.group, round(r.mean_rouge1, 12), r.n) for r in rows] == [("small", 0.1, 1), ("middle", 0.4, 2)]
    with pytest.raises(KeyError):
        aggregate(recs, "size_bucket", [small])


def test_weight_by_book():
    recs = [rec("a", "X", 1.0), rec("a", "X", 1.0), rec("a", "X", 1.0), rec("b", "X", 0.0)]
    assert aggregate(recs)[0].mean_rouge1 == 0.75
    assert aggregate(recs, weight_by_book=True)[0].mean_rouge1 == 0.5


def test_adding_method_leaves_rows_unchanged():
    base = [rec("b", "Romance", 0.2), rec("b", "Horror", 0.6)]
    extra = [rec("b", "Romance", 0.9, method="inc")]
    before = aggregate(base, "aspect")
    after = [r for r in aggregate(base + extra, "aspect") if r.method == "hier"]
    assert before == after


def test_reference_identity_row():
    text = "ada rows out alone"  # 4 tokens
    m = len(tokenize(text))
    rows = compare_generic_to_reference([summary(aspect=GENERIC, text=text)], {"b": text}, Scorer(HashTokenEncoder()))
    (row,) = rows
    assert row.mean_rouge1 == pytest.approx(1.0)
    assert row.mean_meteor == pytest.approx(1 - 0.5 * (1 / m) ** 3)
    assert row.mean_semantic == pytest.approx(1.0)
    cells = render_csv(rows).splitlines()[1].split(",")
    assert cells[2:5] == ["100.00", "99.22", "100.00"]


def test_reference_none_supplied(caplog):
    assert compare_generic_to_reference([summary(aspect=GENERIC)], {}) == []
    assert "no reference" in caplog.text


def test_table_schema():
    row = AggregateRow("hier", "overall", 0.1, 0.2, None, 3)
    assert HEADERS[2:5] == ("ROUGE-1", "METEOR", "BERTScore")
    table = render_table([row])
    assert table.splitlines()[0].split() == ["Method", "Group", "ROUGE-1", "METEOR", "BERTScore", "n", "failed"]
    assert "10.00" in table and "20.00" in table and " - " in table + " "
