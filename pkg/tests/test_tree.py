import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from spinesim.sim import SimConfig, simulate_p, simulate_p_tilde, replicate_rng
from spinesim.tree import (IntegrityError, MarkedTree, NodeRecord, SpineRecord, TreeError, format_label,
                           parse_label)

from helpers import handmade_tree


def test_labels_and_structure():
    tree = handmade_tree()
    assert tree.labels() == [(), (1,), (2,)]
    assert tree.index_of((2,)) == 2
    assert list(tree.children(0)) == [1, 2]
    assert tree.ancestors(2) == [0]
    assert tree.validate() == []
    assert parse_label(format_label((3, 1, 2))) == (3, 1, 2)
    assert parse_label(".") == ()


def test_alive_sets_and_states():
    tree = handmade_tree()
    assert tree.alive_at(0.5) == {()}
    assert tree.alive_at(1.0) == {(1,), (2,)}
    assert tree.alive_at(1.5) == {(1,)}
    assert list(tree.died_childless(1.5)) == [2]
    x, types = tree.state_at(2.0)
    assert x.tolist() == [-0.4] and types.tolist() == [0]
    assert tree.point_measure(1.0) == 2.0
    with pytest.raises(IntegrityError):
        tree.state_at(0.7)
    with pytest.raises(TreeError):
        tree.alive_indices(3.0)


def test_weight_identity_on_handmade_tree():
    tree = handmade_tree()
    assert np.allclose(tree.ancestral_weights(), [1.0, 0.5, 0.5])
    for t in (0.0, 0.5, 1.0, 1.5, 2.0):
        assert tree.weight_identity(t) == pytest.approx(1.0, abs=1e-15)


def test_validate_reports_broken_trees():
    recs = handmade_tree().records()
    bad = [recs[0], NodeRecord((1,), 1.0, math.inf, None, np.array([(1.0, 9.0, 1), (2.0, 0.0, 0)]), (), False),
           recs[2]]
    problems = MarkedTree.from_records(bad, 2.0, (0.0, 0)).validate()
    assert any("birth state" in p for p in problems)
    with pytest.raises(TreeError):
        MarkedTree.from_records([recs[1]], 2.0)


def test_dump_round_trip():
    tree = handmade_tree()
    again = MarkedTree.loads(tree.dumps())
    assert again.dumps() == tree.dumps()
    with pytest.raises(TreeError):
        MarkedTree.loads("(1)\t0\t1\n")


def test_spine_record_from_handmade_tree():
    sp = SpineRecord.from_tree(handmade_tree())
    assert sp.labels == ((), (1,))
    assert sp.n_fissions == 1
    assert sp.dagger_time is None
    assert sp.state_at(1.5) == (0.2, 0)
    dead = SpineRecord.from_tree(handmade_tree(spine=(True, False, True)))
    assert dead.dagger_time == 1.5
    with pytest.raises(TreeError):
        dead.state_at(1.5)


@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.0, 2.0))
@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
def test_simulated_trees_are_valid_and_satisfy_weight_identity(two_type, seed, t):
    cfg = SimConfig(two_type, 2.0, (0.5, 1.0, 2.0), max_nodes=100_000)
    tree, spine = simulate_p_tilde(cfg, 0, replicate_rng(seed, 0))
    assert tree.validate() == []
    assert tree.weight_identity(t) == pytest.approx(1.0, abs=1e-12)
    assert MarkedTree.loads(tree.dumps()).dumps() == tree.dumps()
    # every spine node is the child of the previous one and sits at the root first
    assert spine.labels[0] == ()
    if spine.dagger_time is None:
        assert tree.spine_at(2.0) is not None


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
def test_brownian_trees_have_samples_at_observation_times(bbm, seed):
    cfg = SimConfig(bbm, 1.5, (0.5, 1.0, 1.5), max_nodes=100_000)
    tree = simulate_p(cfg, 0.0, replicate_rng(seed, 0))
    assert tree.validate() == []
    for t in cfg.observation_times:
        x, _ = tree.state_at(t)
        assert x.size == tree.alive_indices(t).size


@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.0, 2.0))
@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
def test_alive_set_matches_full_rescan(two_type, seed, t):
    tree = simulate_p(SimConfig(two_type, 2.0, (2.0,), max_nodes=100_000), 0, replicate_rng(seed, 0))
    rescan = {rec.label for rec in tree.records() if rec.birth <= t < rec.death}
    assert tree.alive_at(t) == rescan


def test_point_measure_of_phi_by_hand(two_type):
    from spinesim.spectral import eigen_for_model

    e = eigen_for_model(two_type)
    tree = handmade_tree()
    assert tree.point_measure(1.0, lambda x, i: e.phi[i]) == pytest.approx(2 * e.phi[1])
    assert tree.point_measure(1.5, lambda x, i: e.phi[i]) == pytest.approx(e.phi[0])
