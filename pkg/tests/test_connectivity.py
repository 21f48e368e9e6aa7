import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aggregates.connectivity import (REST_FACTOR, UnionFind, build_connectivity_graph, contact_components,
                                     optimize_connectivity, spring_energy)
from aggregates.elements import make_instance, world_sample_positions
from conftest import ball_prototype


def test_union_find():
    uf = UnionFind(5)
    assert uf.merge(0, 1) and uf.merge(3, 4) and not uf.merge(1, 0)
    assert uf.n_components() == 3
    uf.merge(1, 4)
    assert uf.find(0) == uf.find(3)


def test_two_elements_one_edge():
    P = np.array([[0.0, 0, 0], [1.5, 0, 0]])
    g = build_connectivity_graph(P, [0.5, 0.7], [0, 1])
    assert g.edges.tolist() == [[0, 1]]
    assert g.rest[0] == REST_FACTOR * (0.5 + 0.7)
    assert g.spans()


def test_collinear_three_elements():
    # AB < BC < AC: AB and BC join the sets; AC survives because A has one neighbour
    P = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.5, 0, 0]])
    g = build_connectivity_graph(P, [0.5] * 3, [0, 1, 2])
    assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (0, 2), (1, 2)]
    assert [tuple(e) for e in g.edges[:2].tolist()] == [(0, 1), (1, 2)]


def test_single_element_has_no_edges():
    g = build_connectivity_graph(np.random.default_rng(0).normal(size=(6, 3)), np.ones(6), np.zeros(6, int))
    assert len(g.edges) == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 10), st.integers(0, 100_000))
def test_graph_spans_random_scenes(n_el, seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(1, 6, size=n_el)
    el = np.repeat(np.arange(n_el), counts)
    centers = rng.uniform(0, 10, size=(n_el, 3))
    P = centers[el] + rng.normal(scale=0.5, size=(len(el), 3))
    r = rng.uniform(0.1, 1.0, size=len(el))
    g = build_connectivity_graph(P, r, el)
    assert g.spans()
    assert np.all(el[g.edges[:, 0]] != el[g.edges[:, 1]])
    assert np.array_equal(g.rest, REST_FACTOR * (r[g.edges[:, 0]] + r[g.edges[:, 1]]))


def test_energy_at_rest_length_is_zero():
    P = np.array([[0.0, 0, 0], [0.9, 0, 0]])
    g = build_connectivity_graph(P, [0.5, 0.5], [0, 1])
    E, G = spring_energy(P, g)
    assert E == 0 and not np.any(G)


def test_spring_energy_gradient_fd(rng):
    P = rng.normal(size=(8, 3)) * 2
    el = np.repeat(np.arange(4), 2)
    g = build_connectivity_graph(P, np.full(8, 0.4), el)
    _, G = spring_energy(P, g)
    h = 1e-6
    for i in range(8):
        for a in range(3):
            Pp, Pm = P.copy(), P.copy()
            Pp[i, a] += h
            Pm[i, a] -= h
            fd = (spring_energy(Pp, g)[0] - spring_energy(Pm, g)[0]) / (2 * h)
            assert fd == pytest.approx(G[i, a], abs=1e-7)


def test_one_dimensional_spring():
    p = ball_prototype(radius=0.5)
    inst = [make_instance(p, t=(0, 0, 0)), make_instance(p, t=(2, 0, 0))]
    ws = world_sample_positions(inst, {p.id: p})
    g = build_connectivity_graph(ws.positions, ws.radius, ws.element)
    out, e0, e1 = optimize_connectivity(g, inst, {p.id: p}, steps=10)
    d = np.linalg.norm(out[1].t - out[0].t)
    assert 0.9 - 1e-12 <= d < 2.0
    assert e1 < e0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_relaxation_never_increases_energy(seed):
    rng = np.random.default_rng(seed)
    p = ball_prototype(radius=0.6)
    inst = [make_instance(p, t=rng.uniform(0, 5, 3), gamma=rng.normal(size=3)) for _ in range(5)]
    ws = world_sample_positions(inst, {p.id: p})
    g = build_connectivity_graph(ws.positions, ws.radius, ws.element)
    lo, hi = np.tile(np.r_[np.zeros(3), -np.pi * np.ones(3)], 5), np.tile(np.r_[np.full(3, 5.0), np.pi * np.ones(3)], 5)
    _, e0, e1 = optimize_connectivity(g, inst, {p.id: p}, lo, hi)
    assert e1 <= e0


def test_contact_components():
    P = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
    assert contact_components(P, [0.5] * 3, [0, 1, 2]) == 2
    assert contact_components(P, [0.5, 0.5, 3.5], [0, 1, 2]) == 1
