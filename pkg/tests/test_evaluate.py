import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import check_tour
from piproute import evaluate as ev
from piproute import instances as I
from piproute import policy as P


def _sols(lengths, feasible, method="m"):
    tours = [[[0]] * len(r) for r in lengths]
    return ev.Solutions(method, tours, lengths, feasible, [0.0] * len(lengths))


def test_gap_example():
    s = _sols([[10.75, 9.0], [20.0]], [[True, False], [True]])
    m = ev.aggregate(s, refs=[10.0, 20.0])
    assert m["mean_gap"] == pytest.approx((0.075 + 0.0) / 2)
    assert m["sol_infsb"] == pytest.approx(1 / 3) and m["inst_infsb"] == 0.0
    assert m["mean_obj"] == pytest.approx((10.75 + 20.0) / 2)


def test_all_infeasible_instance_excluded_from_objective():
    s = _sols([[5.0], [7.0]], [[False], [True]])
    m = ev.aggregate(s, refs=[np.inf, 7.0])
    assert m["inst_infsb"] == 0.5 and m["mean_obj"] == 7.0 and m["mean_gap"] == 0.0


def test_missing_reference_is_an_error():
    s = _sols([[5.0]], [[True]])
    with pytest.raises(ev.MissingReference):
        ev.aggregate(s, refs=[np.inf])
    with pytest.raises(ev.MissingReference):
        ev.aggregate(s, refs=[0.0])


def test_nothing_feasible_gives_nan():
    m = ev.aggregate(_sols([[1.0]], [[False]]), refs=[1.0])
    assert m["sol_infsb"] == 1.0 and math.isnan(m["mean_obj"]) and math.isnan(m["mean_gap"])


def _independent(lengths, feasible, refs):
    # plain loops: per-instance best feasible, then averages
    sols = sum(len(r) for r in lengths)
    bad = sum(1 for r in feasible for ok in r if not ok)
    bests, gaps, none = [], [], 0
    for L, ok, ref in zip(lengths, feasible, refs):
        cand = [x for x, o in zip(L, ok) if o]
        if not cand:
            none += 1
            continue
        bests.append(min(cand))
        gaps.append((min(cand) - ref) / ref)
    nan = float("nan")
    return (bad / sols, none / len(lengths), sum(bests) / len(bests) if bests else nan,
            sum(gaps) / len(gaps) if gaps else nan)


@given(st.lists(st.lists(st.tuples(st.floats(1, 100), st.booleans()), min_size=1, max_size=5),
                min_size=1, max_size=8), st.data())
def test_aggregate_matches_independent_loops(rows, data):
    lengths = [[x for x, _ in r] for r in rows]
    feasible = [[o for _, o in r] for r in rows]
    refs = [data.draw(st.floats(0.5, 100)) for _ in rows]
    m = ev.aggregate(_sols(lengths, feasible), refs=refs)
    want = _independent(lengths, feasible, refs)
    got = (m["sol_infsb"], m["inst_infsb"], m["mean_obj"], m["mean_gap"])
    for a, b in zip(got, want):
        assert (math.isnan(a) and math.isnan(b)) or a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_overlap_restricts_objective_only():
    a = _sols([[1.0], [2.0], [3.0]], [[True], [True], [False]], "a")
    b = _sols([[4.0], [5.0], [6.0]], [[True], [False], [True]], "b")
    keep = ev.overlap_set([a, b])
    assert keep.tolist() == [True, False, False]
    ma = ev.aggregate(a, keep=keep)
    assert ma["mean_obj"] == 1.0 and ma["inst_infsb"] == pytest.approx(1 / 3)


def test_best_reference_has_zero_gap_for_the_winner():
    a = _sols([[1.0], [3.0]], [[True], [True]], "a")
    b = _sols([[2.0], [2.5]], [[True], [True]], "b")
    refs = ev.gap_reference(None, "best", [a, b])
    assert refs.tolist() == [1.0, 2.5]
    assert ev.aggregate(a, refs)["mean_gap"] == pytest.approx(0.1)


def test_deterministic_methods_use_one_solution():
    insts = I.generate_set("tsptw", 10, "medium", 5, 0)
    s = ev.solve("greedy-c", insts, 50, np.random.default_rng(0))
    assert all(len(t) == 1 for t in s.tours)
    assert len(s.times) == 5 and s.wall_s >= 0


def test_solve_metrics_match_checker():
    insts = I.generate_set("tspdl", 9, "hard", 5, 1)
    s = ev.solve("random", insts, 4, np.random.default_rng(0))
    for inst, ts, L, ok in zip(insts, s.tours, s.lengths, s.feasible):
        for t, l_, o in zip(ts, L, ok):
            ref = check_tour(inst, t)
            assert l_ == pytest.approx(ref[0]) and o == (ref[2] == 0)


def test_policy_needs_params():
    with pytest.raises(ValueError):
        ev.solve("policy", I.generate_set("tsptw", 5, "easy", 1, 0), 2, np.random.default_rng(0))


def test_rescore_recomputes_and_validates():
    insts = I.generate_set("tsptw", 6, "hard", 3, 2)
    s = ev.solve("random", insts, 3, np.random.default_rng(1))
    forged = ev.Solutions(s.method, s.tours, [[0.0] * 3] * 3, [[True] * 3] * 3, s.times)
    back = ev.rescore(insts, forged)
    assert back.lengths == s.lengths and back.feasible == s.feasible
    with pytest.raises(ValueError):
        ev.rescore(insts[:2], forged)


def test_exact_reference_small():
    insts = I.generate_set("tsptw", 7, "hard", 4, 3)
    refs = ev.gap_reference(insts, "exact")
    s = ev.solve("policy", insts, 16, np.random.default_rng(0), params=P.PolicyParams.zeros(), mask_mode="exact")
    gaps = ev.aggregate(s, refs)["mean_gap"]
    assert gaps >= -1e-12


def test_reference_file(tmp_path):
    p = tmp_path / "refs.txt"
    p.write_text("1.5\n{\"ref\": 2.0}\n")
    assert ev.gap_reference([0, 0], "file", path=p).tolist() == [1.5, 2.0]
    with pytest.raises(ev.MissingReference):
        ev.gap_reference([0, 0, 0], "file", path=p)
    p.write_text("abc\n")
    with pytest.raises(ev.MissingReference):
        ev.read_references(p)


def test_solutions_round_trip(tmp_path):
    insts = I.generate_set("tsptw", 6, "medium", 3, 0)
    s = ev.solve("random", insts, 2, np.random.default_rng(0))
    ev.write_solutions(tmp_path / "s.jsonl", s)
    back = ev.read_solutions(tmp_path / "s.jsonl")
    assert back.tours == s.tours and back.lengths == s.lengths and back.feasible == s.feasible
    assert back.method == "random" and back.times == pytest.approx(s.times)


def test_report_csv_and_json_agree(tmp_path):
    insts = I.generate_set("tsptw", 8, "medium", 6, 0)
    sets = [ev.solve(m, insts, 4, np.random.default_rng(0)) for m in ("greedy-l", "greedy-c", "random")]
    refs = ev.gap_reference(insts, "best", sets)
    reports = [ev.report_for(s, insts, refs, timing=False) for s in sets]
    csv_path, json_path = ev.write_report(tmp_path / "r.csv", reports)
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    doc = json.loads(open(json_path).read())
    assert [r["method"] for r in rows] == ["greedy-l", "greedy-c", "random"]
    assert list(rows[0]) == list(ev.COLUMNS)
    for r, d in zip(rows, doc):
        for col in ev.COLUMNS:
            if d[col] is None:
                assert r[col] == "nan"
            elif isinstance(d[col], float):
                assert float(r[col]) == d[col]
            else:
                assert r[col] == str(d[col])
    assert rows[0]["dataset"] == "tsptw-8-medium" and rows[0]["N_s"] == "1" and rows[2]["N_s"] == "4"
    assert all(float(r["wall_s"]) == 0.0 for r in rows)


def test_plotdata(tmp_path):
    insts = I.generate_set("tsptw", 6, "medium", 3, 0)
    s = ev.solve("random", insts, 2, np.random.default_rng(0))
    ev.write_plotdata(tmp_path / "p.csv", insts, [s])
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert len(rows) == 3 and all(int(r["n_solutions"]) == 2 for r in rows)
