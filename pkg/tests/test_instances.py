import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import check_tour, unit_draft_feasible
from piproute import instances as I
from piproute.masking import exact_solve_small


def test_tn_twenty_nodes():
    assert abs(I.estimate_tn(20, 100_000, seed=0) - 10.9) <= 0.1


def test_tn_single_point_is_zero():
    assert I.estimate_tn(0, 10, seed=1) == 0.0


def test_tn_fifty_matches_independent_sampler():
    # loop-based sampler with its own generator, mean pairwise distance ~0.5214
    rng = np.random.default_rng(987)
    total = 0.0
    m = 20_000
    for _ in range(m):
        p = rng.random((51, 2))
        total += np.sqrt(((p - np.roll(p, -1, axis=0)) ** 2).sum(1)).sum()
    ours = I.estimate_tn(50, 100_000, seed=5)
    assert abs(ours - total / m) < 0.1
    assert abs(ours - 0.5214 * 51) < 0.15


def test_easy_window_width_law():
    raw = I.gen_tsptw_raw(50, "easy", 3)
    tn = 100 * I.estimate_tn(50)
    width = (raw.tw_hi[1:] - raw.tw_lo[1:]) / tn
    assert np.all(width >= 0.5) and np.all(width <= 0.75)


def test_medium_window_width_law():
    raw = I.gen_tsptw_raw(30, "medium", 4)
    width = (raw.tw_hi[1:] - raw.tw_lo[1:]) / (100 * I.estimate_tn(30))
    assert np.all(width >= 0.1) and np.all(width <= 0.2)


@pytest.mark.parametrize("variant,hardness", [("tsptw", "easy"), ("tsptw", "medium"), ("tsptw", "hard"),
                                              ("tspdl", "medium"), ("tspdl", "hard")])
def test_generation_is_deterministic(variant, hardness):
    a = I.generate(variant, 15, hardness, 42)
    b = I.generate(variant, 15, hardness, 42)
    assert I.serialize_instance(a) == I.serialize_instance(b)
    c = I.generate(variant, 15, hardness, 43)
    assert I.serialize_instance(a) != I.serialize_instance(c)


def test_hard_instances_are_feasible():
    for seed in range(1000):
        tour, length = exact_solve_small(I.gen_tsptw(10, "hard", seed))
        assert tour is not None, seed


def test_hard_lower_bounds_clamped():
    for seed in range(50):
        raw = I.gen_tsptw_raw(20, "hard", seed)
        assert np.all(raw.tw_lo >= 0) and np.all(raw.tw_hi[1:] >= raw.tw_lo[1:])


def test_normalize_one_customer():
    raw = I.RawTsptw(np.array([[0.0, 0.0], [10.0, 0.0]]), np.array([0.0, 0.0]), np.array([np.inf, 40.0]))
    inst = I.normalize_tsptw(raw)
    assert inst.tw_hi[0] == 1.0
    assert inst.tw_hi[1] == pytest.approx(0.8)
    assert inst.travel[0, 1] == pytest.approx(10 / 50)


def test_normalize_rejects_degenerate():
    raw = I.RawTsptw(np.zeros((2, 2)), np.zeros(2), np.array([np.inf, 0.0]))
    with pytest.raises(ValueError):
        I.normalize_tsptw(raw)


@pytest.mark.parametrize("hardness", ["easy", "medium", "hard"])
def test_normalized_values_in_unit_range(hardness):
    for seed in range(20):
        inst = I.gen_tsptw(30, hardness, seed)
        assert inst.tw_hi[0] == 1.0
        assert np.all((inst.tw_lo >= 0) & (inst.tw_hi <= 1) & (inst.tw_lo <= inst.tw_hi))
        assert np.all((inst.coords >= 0) & (inst.coords <= 1))
        # depot deadline covers every customer deadline plus the drive home
        assert np.all(inst.tw_hi[1:] + inst.travel[1:, 0] <= 1.0 + 1e-12)


def _raw_violations(raw, tour):
    d = I.distance_matrix(raw.coords)
    t = 0.0
    cnt = 0
    seq = list(tour) + [0]
    hi0 = np.max(raw.tw_hi[1:] + d[1:, 0])
    hi = raw.tw_hi.copy()
    hi[0] = hi0
    for a, b in zip(seq[:-1], seq[1:]):
        arr = t + d[a, b]
        cnt += arr > hi[b] * (1 + 1e-12)
        t = max(arr, raw.tw_lo[b])
    return cnt


@given(st.integers(0, 10_000), st.sampled_from(["easy", "medium", "hard"]))
def test_normalization_preserves_feasibility(seed, hardness):
    raw = I.gen_tsptw_raw(8, hardness, seed)
    inst = I.normalize_tsptw(raw)
    rng = np.random.default_rng(seed)
    for _ in range(10):
        tour = (0,) + tuple(rng.permutation(np.arange(1, 9)))
        assert (_raw_violations(raw, tour) == 0) == (check_tour(inst, tour)[2] == 0)


def test_tspdl_mutation_count():
    for seed in range(20):
        inst = I.gen_tspdl(50, "medium", seed)
        assert int((inst.draft[1:] < 50).sum()) == 50 * 75 // 100
        assert inst.draft[0] == 50 and inst.demand[0] == 0 and np.all(inst.demand[1:] == 1)
        inst = I.gen_tspdl(50, "hard", seed)
        assert int((inst.draft[1:] < 50).sum()) == 50 * 90 // 100


def test_tspdl_generated_always_feasible():
    for seed in range(500):
        inst = I.gen_tspdl(8, "hard", seed)
        assert I.tspdl_draft_feasible(inst.draft, inst.demand)
        assert unit_draft_feasible(inst.draft), seed


def test_draft_feasible_examples():
    unit = np.array([0, 1, 1, 1, 1])
    assert I.tspdl_draft_feasible(np.array([4, 1, 2, 3, 4]), unit)
    assert not I.tspdl_draft_feasible(np.array([4, 1, 1, 3, 4]), unit)


def test_draft_feasible_refuses_non_unit():
    with pytest.raises(I.NonUnitDemandError):
        I.tspdl_draft_feasible(np.array([5, 2, 5]), np.array([0, 2, 1]))


def test_draft_feasible_matches_brute_force():
    rng = np.random.default_rng(11)
    unit = np.r_[0, np.ones(7, dtype=int)]
    for _ in range(1000):
        draft = np.r_[7, rng.integers(1, 8, 7)]
        assert I.tspdl_draft_feasible(draft, unit) == unit_draft_feasible(draft)


@given(st.integers(0, 2 ** 32), st.sampled_from([("tsptw", "easy"), ("tsptw", "hard"), ("tspdl", "hard")]),
       st.integers(1, 30))
def test_native_round_trip(seed, vh, n):
    inst = I.generate(vh[0], n, vh[1], seed)
    text = I.serialize_instance(inst)
    back = I.parse_instance(text)
    assert I.serialize_instance(back) == text
    if vh[0] == "tsptw":
        assert np.array_equal(back.tw_lo, inst.tw_lo) and np.array_equal(back.tw_hi, inst.tw_hi)
        assert back.time_scale == inst.time_scale
    assert np.array_equal(back.coords, inst.coords)


def test_native_three_node_fixture(tmp_path):
    p = tmp_path / "three.jsonl"
    p.write_text('{"variant": "tsptw", "n": 2, "coords": [[0, 0], [0.5, 0], [0, 0.25]], '
                 '"tw": [[0, 1], [0.1, 0.6], [0.2, 0.9]], "demand": null, "draft": null, '
                 '"hardness": "easy", "seed": 7}\n')
    (inst,) = I.read_instances(p)
    assert inst.n == 2 and inst.seed == 7 and inst.hardness == "easy"
    assert inst.tw_lo.tolist() == [0, 0.1, 0.2] and inst.tw_hi.tolist() == [1, 0.6, 0.9]
    assert inst.dist[1, 2] == pytest.approx(np.hypot(0.5, 0.25))


@pytest.mark.parametrize("text,msg", [
    ("not json", "invalid JSON"),
    ('{"variant": "tsptw", "n": 1, "coords": [[0, 0]], "tw": [[0, 1], [0, 1]]}', "coords"),
    ('{"variant": "tsptw", "n": 1, "coords": [[0, 0], [1, 1]], "tw": [[0, 1], [-1, 1]]}', "window"),
    ('{"variant": "cvrp", "n": 1, "coords": [[0, 0], [1, 1]]}', "variant"),
])
def test_native_parse_errors(text, msg):
    with pytest.raises(I.ParseError, match=msg) as err:
        I.parse_instance(text, 3)
    assert err.value.line == 3


DUMAS = """!! n20w20.xxx synthetic

CUST NO.  XCOORD.  YCOORD.  DEMAND  READY TIME  DUE DATE  SERVICE TIME

    1      16.00     23.00    0.00      0.00    408.00      0.00
    2      22.00      4.00    0.00     62.00     68.00      0.00
    3      12.00      6.00    0.00    181.00    205.00      0.00
  999       0.00      0.00    0.00      0.00      0.00      0.00
"""


def test_dumas_parse():
    raw = I.parse_dumas_raw(DUMAS)
    assert raw.n == 2
    assert raw.coords[1].tolist() == [22.0, 4.0]
    assert raw.tw_lo.tolist() == [0, 62, 181] and raw.tw_hi.tolist() == [408, 68, 205]
    inst = I.parse_dumas(DUMAS)
    # the file's depot deadline is the normalization factor here
    assert inst.tw_hi[0] == 1.0 and inst.tw_hi[1] == pytest.approx(68 / 408)
    assert inst.travel[0, 1] == pytest.approx(np.hypot(6, 19) / 408)


@pytest.mark.parametrize("bad,line,msg", [
    ("    3      12.00      6.00    0.00    181.00\n", 8, "malformed"),
    ("    2      12.00      6.00    0.00    181.00    205.00      0.00\n", 8, "duplicate"),
    ("    4      12.00      6.00    0.00    -1.00    205.00      0.00\n", 8, "window"),
])
def test_dumas_errors_carry_line(bad, line, msg):
    lines = DUMAS.splitlines(keepends=True)
    lines[7] = bad
    with pytest.raises(I.ParseError, match=msg) as err:
        I.parse_dumas_raw("".join(lines))
    assert err.value.line == line
