import itertools
import json
import random

import pytest

from opforge.errors import NotAnEdge, NotATail, NotConnected
from opforge.graphs import (Graph, GraphClass, additive_gamma, automorphisms,
                            canonical_form, classify, contract_edge, corolla,
                            enumerate_graphs, graft, graph_to_bytes,
                            merge_vertices, self_glue, total_gamma,
                            total_genus)


def theta():
    return Graph(["a", "b"], ["f1", "f2", "f3", "g1", "g2", "g3"],
                 {"f1": "g1", "g1": "f1", "f2": "g2", "g2": "f2",
                  "f3": "g3", "g3": "f3"},
                 {"f1": "a", "f2": "a", "f3": "a",
                  "g1": "b", "g2": "b", "g3": "b"})


def loop_graph(extra_tails=0, genus=0):
    flags = ["s", "t"] + [f"x{i}" for i in range(extra_tails)]
    inv = {"s": "t", "t": "s"}
    inv.update({f"x{i}": f"x{i}" for i in range(extra_tails)})
    return Graph(["v"], flags, inv, {f: "v" for f in flags},
                 genus={"v": genus} if genus else {})


# -- structural operations ---------------------------------------------------

def test_graft_corollas():
    c1 = corolla("u", ["a", "b", "c"])
    c2 = corolla("w", ["d", "e"])
    g = graft(c1, "c", c2, "d")
    assert len(g.vertices) == 2
    assert g.edges() == (("c", "d"),)
    assert sorted(g.tails()) == ["a", "b", "e"]


def test_graft_dumbbell():
    g = graft(corolla("u", ["s"]), "s", corolla("w", ["t"]), "t")
    assert len(g.edges()) == 1 and not g.tails()


def test_graft_requires_tails():
    g = theta()
    with pytest.raises(NotATail):
        graft(g, "f1", corolla("w", ["t"]), "t")


def test_graft_rooted_trees_stays_rooted():
    r1 = corolla("u", ["r", "l1", "l2"],
                 orientation={"r": "out", "l1": "in", "l2": "in"})
    r2 = corolla("w", ["r2", "m1"],
                 orientation={"r2": "out", "m1": "in"})
    g = graft(r1, "l1", r2, "r2")
    assert classify(g, "rooted-tree")


def test_contract_edge_merges_and_adds_genus():
    c1 = corolla("u", ["a", "b", "c"], genus=1)
    c2 = corolla("w", ["d", "e"], genus=2)
    g = graft(c1, "c", c2, "d")
    c = contract_edge(g, g.edges()[0])
    assert len(c.vertices) == 1
    assert sorted(c.tails()) == ["a", "b", "e"]
    assert c.genus[c.vertices[0]] == 3


def test_contract_loop_increments_genus():
    c = contract_edge(loop_graph(), ("s", "t"))
    assert c.genus == {"v": 1}
    assert not c.flags


def test_contract_requires_edge():
    with pytest.raises(NotAnEdge):
        contract_edge(corolla("u", ["a"]), ("a", "a"))


def test_contract_tree_confluence():
    # contracting all edges in any order yields the same canonical corolla
    g = graft(graft(corolla("u", ["a", "b", "c"]), "c",
                    corolla("w", ["d", "e"]), "d"),
              "e", corolla("z", ["p", "q"]), "p")
    results = set()
    for order in itertools.permutations(range(2)):
        h = g
        for _ in order:
            h = contract_edge(h, h.edges()[_ if _ < len(h.edges()) else 0])
        results.add(canonical_form(h)[0].canonical_key())
    assert len(results) == 1
    final = contract_edge(contract_edge(g, g.edges()[0]), None
                          if False else contract_edge(g, g.edges()[0]).edges()[0])
    assert len(final.vertices) == 1


def test_merge_vertices():
    m = merge_vertices(corolla("u", ["a", "b"]), "u", corolla("w", ["c"]), "w")
    assert len(m.vertices) == 1
    assert sorted(m.tails()) == ["a", "b", "c"]
    # merger never changes edge or tail counts
    t = theta()
    m2 = merge_vertices(t, "a", corolla("w", ["c"]), "w")
    assert len(m2.edges()) == len(t.edges())
    assert len(m2.tails()) == len(t.tails()) + 1


def test_merge_rooted_corollas_gives_two_out_tails():
    r1 = corolla("u", ["r1", "a"], orientation={"r1": "out", "a": "in"})
    r2 = corolla("w", ["r2", "b"], orientation={"r2": "out", "b": "in"})
    m = merge_vertices(r1, "u", r2, "w")
    outs = [f for f in m.flags if m.orientation[f] == "out"]
    assert len(outs) == 2


def test_graft_then_contract_equals_merger_plus_flag_deletion():
    rng = random.Random(7)
    for _ in range(25):
        n1 = rng.randrange(1, 4)
        n2 = rng.randrange(1, 4)
        c1 = corolla("u", [f"a{i}" for i in range(n1)] + ["s"], genus=rng.randrange(2))
        c2 = corolla("w", [f"b{i}" for i in range(n2)] + ["t"], genus=rng.randrange(2))
        g = contract_edge(graft(c1, "s", c2, "t"), ("s", "t"))
        m = merge_vertices(corolla("u", [f"a{i}" for i in range(n1)],
                                   genus=c1.genus.get("u", 0)), "u",
                           corolla("w", [f"b{i}" for i in range(n2)],
                                   genus=c2.genus.get("w", 0)), "w")
        assert canonical_form(g)[0] == canonical_form(m)[0]


# -- genus bookkeeping --------------------------------------------------------

def test_total_genus():
    assert total_genus(theta()) == 2
    tree = graft(corolla("u", ["a", "c"]), "c", corolla("w", ["d", "e"]), "d")
    assert total_genus(tree) == 0
    assert total_genus(loop_graph(genus=1)) == 2
    two = Graph(["a", "b"], ["f", "g"], {"f": "f", "g": "g"},
                {"f": "a", "g": "b"})
    with pytest.raises(NotConnected):
        total_genus(two)


def test_total_gamma():
    # two disjoint genus-0 loops: chi = 0, result 1
    g = Graph(["a", "b"], ["s1", "t1", "s2", "t2"],
              {"s1": "t1", "t1": "s1", "s2": "t2", "t2": "s2"},
              {"s1": "a", "t1": "a", "s2": "b", "t2": "b"}, gamma={})
    assert total_gamma(g) == 1
    assert additive_gamma(g) == 2  # betti-based version is additive
    # connected, gamma = genus equals total genus
    t = theta()
    tg = Graph(t.vertices, t.flags, t.involution, t.boundary,
               gamma={v: 0 for v in t.vertices})
    assert total_gamma(tg) == total_genus(t)
    assert total_gamma(corolla("v", ["a"], gamma=3)) == 3


# -- classification -----------------------------------------------------------

def test_classify():
    dumbbell = graft(corolla("u", ["s"]), "s", corolla("w", ["t"]), "t")
    assert classify(dumbbell, "tree")
    assert not classify(loop_graph(), "tree")
    assert not classify(theta(), "tree")
    assert classify(theta(), "stable-graph")
    assert not classify(corolla("v", ["a", "b"]), "stable-graph")
    assert classify(corolla("v", ["a", "b", "c"]), "stable-graph")
    oriented = graft(corolla("u", ["a"], orientation={"a": "out"}), "a",
                     corolla("w", ["b"], orientation={"b": "in"}), "b")
    assert classify(oriented, "directed-no-wheels")
    assert classify(oriented, GraphClass("directed-tree"))


def test_classify_wheel():
    # single vertex with an oriented loop is a wheel
    w = Graph(["v"], ["s", "t"], {"s": "t", "t": "s"}, {"s": "v", "t": "v"},
              orientation={"s": "out", "t": "in"})
    assert not classify(w, "directed-no-wheels")
    assert classify(w, "directed-wheeled")


def test_stability_closed_under_contraction():
    graphs = enumerate_graphs("stable-graph", {"labels": ["1", "2"], "genus": 1}, 2)
    for g in graphs:
        for e in g.edges():
            h = contract_edge(g, e)
            assert classify(h, "stable-graph")


# -- canonical form -----------------------------------------------------------

def test_canonical_idempotent():
    g = theta()
    c1, _ = canonical_form(g)
    c2, _ = canonical_form(c1)
    assert c1 == c2


def test_canonical_form_of_relabelings():
    g2 = Graph(["x", "y"], ["p1", "p2", "p3", "q1", "q2", "q3"],
               {"p1": "q1", "q1": "p1", "p2": "q2", "q2": "p2",
                "p3": "q3", "q3": "p3"},
               {"p1": "x", "p2": "x", "p3": "x",
                "q1": "y", "q2": "y", "q3": "y"})
    assert canonical_form(theta())[0] == canonical_form(g2)[0]


def _random_graph(rng):
    nv = rng.randrange(2, 6)
    vertices = [f"v{i}" for i in range(nv)]
    flags, involution, boundary = [], {}, {}
    for e in range(rng.randrange(1, 6)):
        a, b = rng.randrange(nv), rng.randrange(nv)
        fa, fb = f"e{e}a", f"e{e}b"
        flags += [fa, fb]
        involution[fa], involution[fb] = fb, fa
        boundary[fa], boundary[fb] = vertices[a], vertices[b]
    for t in range(rng.randrange(0, 3)):
        f = f"t{t}"
        flags.append(f)
        involution[f] = f
        boundary[f] = vertices[rng.randrange(nv)]
    return Graph(vertices, flags, involution, boundary)


def _relabel(g, rng):
    vs = list(g.vertices)
    fs = list(g.flags)
    vmap = dict(zip(vs, rng.sample([f"w{i}" for i in range(len(vs))], len(vs))))
    fmap = dict(zip(fs, rng.sample([f"h{i}" for i in range(len(fs))], len(fs))))
    return Graph([vmap[v] for v in vs], [fmap[f] for f in fs],
                 {fmap[f]: fmap[p] for f, p in g.involution.items()},
                 {fmap[f]: vmap[v] for f, v in g.boundary.items()},
                 genus={vmap[v]: k for v, k in g.genus.items()},
                 labels={fmap[f]: l for f, l in g.labels.items()})


def test_canonical_form_random_relabelings():
    rng = random.Random(99)
    for trial in range(10):
        g = _random_graph(rng)
        keys = set()
        for _ in range(10):
            keys.add(canonical_form(_relabel(g, rng))[0].canonical_key())
        assert len(keys) == 1


def _brute_isomorphic(g1, g2):
    """Permutation-search isomorphism oracle, independent of canonical_form."""
    if (len(g1.vertices) != len(g2.vertices)
            or len(g1.flags) != len(g2.flags)):
        return False
    for vperm in itertools.permutations(g2.vertices):
        vmap = dict(zip(g1.vertices, vperm))
        if any(g1.g_of(v) != g2.g_of(vmap[v]) for v in g1.vertices):
            continue
        flag_pools = {}
        ok = True
        for v in g1.vertices:
            src = sorted(g1.vertex_flags(v))
            dst = sorted(g2.vertex_flags(vmap[v]))
            if len(src) != len(dst):
                ok = False
                break
            flag_pools[v] = (src, dst)
        if not ok:
            continue
        pools = [[dict(zip(flag_pools[v][0], p))
                  for p in itertools.permutations(flag_pools[v][1])]
                 for v in g1.vertices]
        for choice in itertools.product(*pools):
            fmap = {}
            for d in choice:
                fmap.update(d)
            if all(fmap[g1.involution[f]] == g2.involution[fmap[f]]
                   and g1.labels.get(f, "") == g2.labels.get(fmap[f], "")
                   for f in g1.flags):
                return True
    return False


def test_canonical_form_agrees_with_brute_force_oracle():
    rng = random.Random(41)
    graphs = [_random_graph(rng) for _ in range(8)]
    for g1, g2 in itertools.combinations(graphs, 2):
        if len(g1.flags) > 8 or len(g2.flags) > 8:
            continue
        same = canonical_form(g1)[0] == canonical_form(g2)[0]
        assert same == _brute_isomorphic(g1, g2)
    for g in graphs:
        assert _brute_isomorphic(g, canonical_form(g)[0])


# -- automorphisms ------------------------------------------------------------

def test_automorphisms():
    labeled = corolla("v", ["a", "b"], labels={"a": "1", "b": "2"})
    assert len(automorphisms(labeled)) == 1
    assert len(automorphisms(theta())) == 12
    assert len(automorphisms(loop_graph())) == 2


def test_automorphisms_closed_under_composition():
    auts = automorphisms(theta())
    table = {tuple(sorted(f.items())) for _, f in auts}
    for _, f1 in auts:
        for _, f2 in auts:
            comp = {k: f1[v] for k, v in f2.items()}
            assert tuple(sorted(comp.items())) in table


# -- enumeration --------------------------------------------------------------

def test_enumerate_stable_04():
    res = enumerate_graphs("stable-graph",
                           {"labels": ["1", "2", "3", "4"], "genus": 0}, 1)
    assert len(res) == 4
    shapes = sorted(len(g.vertices) for g in res)
    assert shapes == [1, 2, 2, 2]


def test_enumerate_zero_edges_gives_corolla():
    res = enumerate_graphs("stable-graph",
                           {"labels": ["1", "2", "3"], "genus": 0}, 0)
    assert len(res) == 1 and len(res[0].vertices) == 1


def _count_rooted_trees_oracle(n_leaves, max_edges, min_arity=1):
    """Recursive enumeration of rooted trees with labeled leaves.

    Counts isomorphism classes of rooted trees with the given labeled
    leaves, every internal vertex of arity >= min_arity, and at most
    max_edges internal edges.
    """

    def trees(leaves, edges_left):
        # a tree is either a single leaf (no vertex) or a root vertex with
        # a set partition of the leaves into >= min_arity child subtrees
        out = set()
        out.add(("leaf", leaves[0]) if len(leaves) == 1 else None)
        out.discard(None)
        if len(leaves) >= 1:
            for parts in _set_partitions(leaves):
                if len(parts) < min_arity:
                    continue
                child_sets = []
                for part in parts:
                    opts = set()
                    if len(part) == 1:
                        opts.add(("leaf", part[0]))
                    if edges_left > 0:
                        opts |= {t for t in trees(part, edges_left - 1)
                                 if t[0] != "leaf"}
                    child_sets.append(sorted(opts))
                for combo in itertools.product(*child_sets):
                    used = sum(1 for t in combo if t[0] != "leaf")
                    if used <= edges_left:
                        out.add(("node", tuple(sorted(combo))))
        return out

    return len([t for t in trees(tuple(sorted(str(i) for i in range(1, n_leaves + 1))), max_edges)
                if t[0] == "node"])


def _set_partitions(items):
    items = list(items)
    if len(items) == 1:
        yield [tuple(items)]
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [tuple(sorted((first,) + part[i]))] + part[i + 1:]
        yield [(first,)] + part


def test_enumerate_rooted_trees_vs_recursive_oracle():
    for max_edges in (0, 1):
        got = enumerate_graphs(
            "rooted-tree",
            {"in_labels": ["1", "2"], "out_labels": ["r"]}, max_edges,
            vertex_ok=lambda g, v: sum(
                1 for f in g.vertex_flags(v) if g.orientation[f] == "in") >= 1)
        assert len(got) == _count_rooted_trees_oracle(2, max_edges)


def _brute_enumerate_oracle(labels, genus, max_edges):
    """Quotient all boundary/involution tables by brute-force isomorphism."""
    reps = []
    for k in range(max_edges + 1):
        flags = list(labels) + [f"e{i}{c}" for i in range(k) for c in "ab"]
        if len(flags) > 8:
            continue
        pair_sets = [[(f"e{i}a", f"e{i}b") for i in range(k)]]
        for nv in range(1, k + 2):
            for bnd in itertools.product(range(nv), repeat=len(flags)):
                if set(bnd) != set(range(nv)):
                    continue
                inv = {f: f for f in labels}
                for a, b in pair_sets[0]:
                    inv[a], inv[b] = b, a
                for extra in (e for d in range(genus + 1)
                              for e in _distribute(d, nv)):
                    try:
                        g = Graph([f"v{i}" for i in range(nv)], flags, inv,
                                  {f: f"v{i}" for f, i in zip(flags, bnd)},
                                  genus={f"v{i}": d for i, d in enumerate(extra) if d},
                                  labels={l: l for l in labels})
                    except ValueError:
                        continue
                    if not g.is_connected():
                        continue
                    if total_genus(g) != genus:
                        continue
                    if not classify(g, "stable-graph"):
                        continue
                    if not any(_brute_isomorphic(g, r) for r in reps):
                        reps.append(g)
    return reps


def _distribute(total, parts):
    if parts == 0:
        if total == 0:
            yield ()
        return
    for x in range(total + 1):
        for rest in _distribute(total - x, parts - 1):
            yield (x,) + rest


def test_enumerate_agrees_with_brute_force():
    for labels, genus, k in [(["1", "2", "3"], 0, 1), (["1"], 1, 1),
                             (["1", "2"], 1, 1)]:
        fast = enumerate_graphs("stable-graph",
                                {"labels": labels, "genus": genus}, k)
        slow = _brute_enumerate_oracle(labels, genus, k)
        assert len(fast) == len(slow)


def test_enumeration_deterministic():
    a = enumerate_graphs("stable-graph", {"labels": ["1", "2", "3"], "genus": 1}, 2)
    b = enumerate_graphs("stable-graph", {"labels": ["1", "2", "3"], "genus": 1}, 2)
    assert [g.canonical_key() for g in a] == [g.canonical_key() for g in b]


# -- serialization ------------------------------------------------------------

def test_json_roundtrip():
    g = theta()
    data = g.to_json()
    h = Graph.from_json(json.loads(json.dumps(data)))
    assert canonical_form(g)[0] == canonical_form(h)[0]
    assert graph_to_bytes(g) == graph_to_bytes(h)
