# %% [markdown]
# # Receptive field of the point encoder
#
# Remove the ReLUs, replace max aggregation by a mean, back-propagate from one
# point's latent and list the input points that receive gradient. Each layer
# looks at k_enc neighbours, so the field should be the L-hop kNN closure.

# %%
import numpy as np

from poco import PocoConfig, PocoModel, PointCloud
from poco.model import encoder_neighbors
from poco.probe import knn_graph_closure, receptive_field_probe

rng = np.random.default_rng(0)
cloud = PointCloud(rng.random((2000, 3)))

# %%
for L in range(5):
    model = PocoModel(PocoConfig(L=L, k_enc=8), seed=0)
    found = receptive_field_probe(model, cloud, 0)
    expected = knn_graph_closure(encoder_neighbors(cloud, 8), 0, L)
    print(f"L={L}: {len(found):4d} points, equals {L}-hop closure: {found == expected}")

# %% [markdown]
# The field grows with depth but far slower than k_enc^L, because neighbour
# lists overlap: about a hundred points for L = 4 and k_enc = 8.

# %%
model = PocoModel(PocoConfig(L=4, k_enc=8), seed=0)
found = np.array(sorted(receptive_field_probe(model, cloud, 0)))
radius = np.linalg.norm(cloud.points[found] - cloud.points[0], axis=1).max()
print("spatial radius of the field", round(float(radius), 3))
