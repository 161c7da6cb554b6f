import itertools

import pytest
from hypothesis import given, strategies as st

from upt.answers import NO_ANSWER, choice, numeric
from upt.voting import majority_vote, pseudo_rewards, supervised_rewards

A, B, C = choice("A"), choice("B"), choice("C")
N = NO_ANSWER


def test_vote_examples():
    v = majority_vote([A, A, A, A])
    assert v.winner == A and not v.tie and v.voters == 4
    v = majority_vote([A, A, B, C])
    assert v.winner == A and v.winner_count == 2 and not v.tie
    v = majority_vote([A, B, A, B])
    assert v.winner == A and v.tie
    v = majority_vote([N, N])
    assert v.winner is None and v.voters == 0


def test_vote_merges_equivalent_numerics():
    v = majority_vote([numeric(0.5), numeric(1), numeric("1/2")])
    assert v.winner.canonical == "1/2" and v.winner_count == 2


def test_vote_rejects_empty():
    with pytest.raises(ValueError):
        majority_vote([])


def test_pseudo_reward_examples():
    ans = [A, A, B, C]
    assert pseudo_rewards(ans, majority_vote(ans)) == [1, 1, 0, 0]
    assert pseudo_rewards([B] * 5, majority_vote([B] * 5)) == [1] * 5
    assert pseudo_rewards([N, N, N], majority_vote([N, N, N])) == [0, 0, 0]


def test_none_never_rewarded():
    ans = [N, A, N]
    assert pseudo_rewards(ans, majority_vote(ans)) == [0, 1, 0]


def test_supervised_reward_examples():
    assert supervised_rewards([B, A, B], B) == [1, 0, 1]
    assert supervised_rewards([A, A], A) == [1, 1]
    assert supervised_rewards([A, C], B) == [0, 0]
    with pytest.raises(ValueError):
        supervised_rewards([A], N)


def mode_oracle(answers):
    """Direct mode finder: max count, earliest first occurrence on ties."""
    labels = [a.canonical for a in answers if a.kind != "none"]
    if not labels:
        return None, False
    counts = {x: labels.count(x) for x in labels}
    best = max(counts.values())
    leaders = [x for x in counts if counts[x] == best]
    first = min(leaders, key=labels.index)
    return first, len(leaders) > 1


ALPHABET = [A, B, C, N]


def all_lists(max_g=6):
    for g in range(1, max_g + 1):
        yield from itertools.product(ALPHABET, repeat=g)


def test_vote_matches_brute_force():
    for ans in all_lists():
        v = majority_vote(list(ans))
        w, tie = mode_oracle(ans)
        assert (v.winner.canonical if v.winner else None) == w
        assert v.tie == tie
        assert sum(c for _, c in v.counts) == v.voters <= len(ans)


def test_deleting_a_non_winner_keeps_winner():
    for ans in all_lists():
        v = majority_vote(list(ans))
        if v.winner is None:
            continue
        for i, a in enumerate(ans):
            if a == v.winner:
                continue
            rest = list(ans[:i] + ans[i + 1:])
            assert majority_vote(rest).winner == v.winner


lists = st.lists(st.sampled_from(ALPHABET), min_size=1, max_size=12)


@given(lists, st.randoms(use_true_random=False))
def test_permutation_covariance(ans, rnd):
    perm = list(range(len(ans)))
    rnd.shuffle(perm)
    v = majority_vote(ans)
    shuffled = [ans[i] for i in perm]
    vs = majority_vote(shuffled)
    r, rs = pseudo_rewards(ans, v), pseudo_rewards(shuffled, vs)
    if not v.tie:
        assert vs.winner == v.winner
        assert rs == [r[i] for i in perm]
    assert vs.winner_count == v.winner_count


@given(lists)
def test_reward_sum_is_winner_multiplicity(ans):
    v = majority_vote(ans)
    assert sum(pseudo_rewards(ans, v)) == v.winner_count
    assert all(v.winner_count >= c for _, c in v.counts)
