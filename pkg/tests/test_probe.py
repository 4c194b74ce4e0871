import numpy as np

from poco import PocoConfig, PocoModel, PointCloud
from poco.model import encoder_neighbors
from poco.probe import knn_graph_closure, receptive_field_probe


def cloud(n=200, seed=0):
    return PointCloud(np.random.default_rng(seed).random((n, 3)))


def test_probe_without_layers_is_self():
    model = PocoModel(PocoConfig(L=0, k_enc=4, n=6), seed=0)
    assert receptive_field_probe(model, cloud(30), 5) == {5}


def test_probe_matches_two_hop_closure():
    c = cloud()
    model = PocoModel(PocoConfig(L=2, k_enc=4, n=8, hidden=16), seed=2)
    for i in (0, 17, 123):
        expected = knn_graph_closure(encoder_neighbors(c, 4), i, 2)
        assert receptive_field_probe(model, c, i) == expected


def test_probe_infinite_threshold_is_empty():
    model = PocoModel(PocoConfig(L=1, k_enc=4, n=6), seed=0)
    assert receptive_field_probe(model, cloud(30), 2, threshold=np.inf) == set()


def test_probe_is_subset_of_closure():
    c = cloud(120, seed=3)
    model = PocoModel(PocoConfig(L=3, k_enc=3, n=5, hidden=6), seed=4)
    found = receptive_field_probe(model, c, 7)
    assert 7 in found
    assert found <= knn_graph_closure(encoder_neighbors(c, 3), 7, 3)


def test_closure_oracle():
    nbr = np.array([[0, 1], [1, 2], [2, 3], [3, 3]])
    assert knn_graph_closure(nbr, 0, 0) == {0}
    assert knn_graph_closure(nbr, 0, 2) == {0, 1, 2}
