import itertools
import random

import pytest

from odflow.network import (
    DanglingReference,
    DisconnectedGraph,
    Link,
    NoPath,
    Node,
    Region,
    UnassignedNode,
    build_network,
    enumerate_od_pairs,
    network_digest,
    region_flow_index,
    shortest_path,
)

from conftest import complete_network, diamond_network, two_node_network


def all_simple_paths(net, origin, destination):
    """Exhaustive simple-path enumeration (oracle for small graphs)."""
    results = []

    def extend(node, visited, links, length):
        if node == destination:
            results.append((tuple(links), length))
            return
        for nxt, lid, w in net.out_edges(node):
            if nxt not in visited:
                extend(nxt, visited | {nxt}, links + [lid], length + w)

    extend(origin, {origin}, [], 0.0)
    return results


class TestBuildNetwork:
    def test_two_node_network_valid(self):
        net = two_node_network()
        assert set(net.nodes) == {"A", "B"}
        assert set(net.links) == {"AB", "BA"}

    def test_unknown_node_reference(self):
        nodes = [Node("A", 0, 0), Node("B", 0, 1)]
        links = [Link("AB", "A", "B", 1.0), Link("BX", "B", "X", 1.0)]
        with pytest.raises(DanglingReference):
            build_network(nodes, links)

    def test_no_return_path_is_disconnected(self):
        nodes = [Node(n, 0, i * 0.1) for i, n in enumerate("ABC")]
        links = [Link("AB", "A", "B", 1.0), Link("BC", "B", "C", 1.0)]
        with pytest.raises(DisconnectedGraph) as err:
            build_network(nodes, links)
        origin, destination = err.value.pair
        # the named pair really is unreachable
        reachable = {"A": {"A", "B", "C"}, "B": {"B", "C"}, "C": {"C"}}
        assert destination not in reachable[origin]

    def test_invalid_coordinates_rejected(self):
        with pytest.raises(ValueError):
            Node("A", 91.0, 0.0)
        with pytest.raises(ValueError):
            Node("A", 0.0, -181.0)

    def test_self_loop_and_nonpositive_length_rejected(self):
        with pytest.raises(ValueError):
            Link("AA", "A", "A", 1.0)
        with pytest.raises(ValueError):
            Link("AB", "A", "B", 0.0)

    def test_duplicate_node_id_rejected(self):
        nodes = [Node("A", 0, 0), Node("A", 0, 1), Node("B", 0, 2)]
        links = [Link("AB", "A", "B", 1.0), Link("BA", "B", "A", 1.0)]
        with pytest.raises(Exception):
            build_network(nodes, links)

    def test_node_in_two_regions_rejected(self):
        nodes = [Node("A", 0, 0), Node("B", 0, 1)]
        links = [Link("AB", "A", "B", 1.0), Link("BA", "B", "A", 1.0)]
        regions = [Region("R1", "one", node_ids={"A"}),
                   Region("R2", "two", node_ids={"A", "B"})]
        with pytest.raises(Exception, match="regions"):
            build_network(nodes, links, regions)


class TestEnumerateOdPairs:
    @pytest.mark.parametrize("n,expected", [(2, 2), (5, 20), (8, 56)])
    def test_count_is_n_times_n_minus_1(self, n, expected):
        net = complete_network(n)
        assert len(enumerate_od_pairs(net)) == expected

    def test_pairs_are_all_ordered_pairs(self):
        net = complete_network(3)
        pairs = {(od.origin, od.destination) for od in enumerate_od_pairs(net)}
        expected = {(a, b) for a in net.nodes for b in net.nodes if a != b}
        assert pairs == expected

    def test_every_pair_has_a_path(self):
        net = complete_network(4)
        for od in enumerate_od_pairs(net):
            assert od.paths
            assert od.paths[0].link_ids


class TestShortestPath:
    def test_single_link(self):
        net = two_node_network()
        path = shortest_path(net, "A", "B")
        assert path.link_ids == ("AB",)
        assert path.total_length == pytest.approx(5.0)

    def test_diamond_tie_is_minimal_and_stable(self):
        net = diamond_network()
        candidates = all_simple_paths(net, "A", "D")
        best = min(length for _, length in candidates)
        first = shortest_path(net, "A", "D", tie_break_seed=7)
        assert first.total_length == pytest.approx(best)
        assert first.link_ids in {("AB", "BD"), ("AC", "CD")}
        for _ in range(5):
            again = shortest_path(net, "A", "D", tie_break_seed=7)
            assert again.link_ids == first.link_ids

    def test_diamond_both_ties_reachable_over_seeds(self):
        net = diamond_network()
        picks = {shortest_path(net, "A", "D", tie_break_seed=s).link_ids
                 for s in range(20)}
        assert picks == {("AB", "BD"), ("AC", "CD")}

    def test_no_path_raises(self):
        # bypass build-time connectivity by querying a lone subgraph directly
        nodes = [Node(n, 0, i * 0.1) for i, n in enumerate("ABC")]
        links = [Link("AB", "A", "B", 1.0), Link("BA", "B", "A", 1.0),
                 Link("BC", "B", "C", 1.0), Link("CB", "C", "B", 1.0)]
        net = build_network(nodes, links)
        object.__setattr__(net, "_out", {**net._out, "C": ()})
        with pytest.raises(NoPath):
            shortest_path(net, "C", "A")

    def test_minimality_on_random_graphs(self):
        rng = random.Random(42)
        for trial in range(10):
            n = rng.randint(3, 6)
            nodes = [Node(f"n{i}", 0, i * 0.01) for i in range(n)]
            links = [Link(f"r{i}", f"n{i}", f"n{(i + 1) % n}", rng.uniform(1, 5))
                     for i in range(n)]
            extra = [Link(f"e{i}_{j}", f"n{i}", f"n{j}", rng.uniform(1, 5))
                     for i in range(n) for j in range(n)
                     if i != j and (i + 1) % n != j and rng.random() < 0.4]
            net = build_network(nodes, links + extra)
            for origin, destination in itertools.permutations(net.nodes, 2):
                got = shortest_path(net, origin, destination, tie_break_seed=trial)
                best = min(length for _, length in
                           all_simple_paths(net, origin, destination))
                assert got.total_length == pytest.approx(best, rel=1e-9)


class TestRegionFlowIndex:
    def test_two_single_node_regions(self, two_node_net_with_ods):
        index = region_flow_index(two_node_net_with_ods)
        assert set(index) == {("R1", "R2"), ("R2", "R1")}
        assert all(len(v) == 1 for v in index.values())

    def test_single_region_holds_all_pairs(self):
        nodes = [Node("A", 0, 0, region_id="R"), Node("B", 0, 1, region_id="R")]
        links = [Link("AB", "A", "B", 1.0), Link("BA", "B", "A", 1.0)]
        net = build_network(nodes, links, [Region("R", "all")])
        net = net.with_od_pairs(enumerate_od_pairs(net))
        index = region_flow_index(net)
        assert set(index) == {("R", "R")}
        assert index[("R", "R")] == {0, 1}

    def test_matches_brute_force_scan(self):
        net = complete_network(4, regions=2)
        net = net.with_od_pairs(enumerate_od_pairs(net))
        index = region_flow_index(net)
        for (ri, rj), members in index.items():
            expected = {i for i, od in enumerate(net.od_pairs)
                        if net.nodes[od.origin].region_id == ri
                        and net.nodes[od.destination].region_id == rj}
            assert members == expected
        # partition: union is everything, pairwise disjoint
        union = set().union(*index.values())
        assert union == set(range(len(net.od_pairs)))
        assert sum(len(v) for v in index.values()) == len(net.od_pairs)

    def test_unassigned_node_raises(self):
        nodes = [Node("A", 0, 0, region_id="R1"), Node("B", 0, 1)]
        links = [Link("AB", "A", "B", 1.0), Link("BA", "B", "A", 1.0)]
        net = build_network(nodes, links)
        net = net.with_od_pairs(enumerate_od_pairs(net))
        with pytest.raises(UnassignedNode):
            region_flow_index(net)


class TestNetworkDigest:
    def test_stable_and_sensitive(self):
        net_a = complete_network(3)
        net_b = complete_network(3)
        assert network_digest(net_a) == network_digest(net_b)
        with_ods = net_a.with_od_pairs(enumerate_od_pairs(net_a))
        assert network_digest(with_ods) != network_digest(net_a)
        assert network_digest(complete_network(4)) != network_digest(net_a)


class TestPathInvariants:
    def test_path_links_are_consecutive(self):
        net = complete_network(5)
        for od in enumerate_od_pairs(net):
            for path in od.paths:
                nodes = net.path_nodes(path)
                assert nodes[0] == od.origin
                assert nodes[-1] == od.destination
                total = sum(net.links[lid].length_km for lid in path.link_ids)
                assert path.total_length == pytest.approx(total)
