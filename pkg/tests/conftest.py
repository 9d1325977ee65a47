import pytest

from odflow.grid import make_grid
from odflow.network import Link, Node, Region, build_network, enumerate_od_pairs


def two_node_network():
    """Smallest strongly connected digraph: two nodes, two opposing links."""
    nodes = [Node("A", 34.00, -118.00, region_id="R1"),
             Node("B", 34.05, -118.00, region_id="R2")]
    links = [Link("AB", "A", "B", 5.0, sensor_ids=("sAB",)),
             Link("BA", "B", "A", 5.0, sensor_ids=("sBA",))]
    regions = [Region("R1", "west"), Region("R2", "east")]
    return build_network(nodes, links, regions)


def complete_network(n=4, length_km=10.0, regions=2):
    """Complete digraph: every OD pair's unique shortest path is its own link."""
    nodes = [Node(f"n{i}", 34.0 + 0.03 * i, -118.0 - 0.03 * (i % 3),
                  region_id=f"R{(i % regions) + 1}")
             for i in range(n)]
    links = [Link(f"l{i}_{j}", f"n{i}", f"n{j}", length_km)
             for i in range(n) for j in range(n) if i != j]
    region_objs = [Region(f"R{k + 1}", f"region {k + 1}") for k in range(regions)]
    return build_network(nodes, links, region_objs)


def diamond_network():
    """Two equal-length A->D routes (via B and via C), plus return edges."""
    nodes = [Node(name, 34.0 + 0.01 * i, -118.0) for i, name in enumerate("ABCD")]
    links = [
        Link("AB", "A", "B", 2.0), Link("BD", "B", "D", 2.0),
        Link("AC", "A", "C", 2.0), Link("CD", "C", "D", 2.0),
        Link("DA", "D", "A", 3.0),
        Link("BA", "B", "A", 2.0), Link("DB", "D", "B", 2.0),
        Link("CA", "C", "A", 2.0), Link("DC", "D", "C", 2.0),
    ]
    return build_network(nodes, links)


@pytest.fixture
def two_node_net():
    return two_node_network()


@pytest.fixture
def two_node_net_with_ods():
    net = two_node_network()
    return net.with_od_pairs(enumerate_od_pairs(net))


@pytest.fixture
def complete4_net():
    net = complete_network(4)
    return net.with_od_pairs(enumerate_od_pairs(net))


@pytest.fixture
def day_grid():
    """One day at 60-minute intervals: 24 intervals."""
    return make_grid(60, "2019-03-01", 1)


@pytest.fixture
def two_day_grid():
    return make_grid(120, "2019-03-01", 2)
