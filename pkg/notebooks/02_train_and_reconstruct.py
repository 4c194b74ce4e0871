# %% [markdown]
# # Training on a sphere and reconstructing a noisy scan
#
# A reduced network trains in about two minutes on one core; the defaults
# (n = 32, k = 64, h = 64, four encoder layers) take a few minutes longer.

# %%
import time

import numpy as np
from threadpoolctl import threadpool_limits

from poco import AnalyticField, ModelField, PocoConfig, PocoModel, encode, evaluate_reconstruction, mc_regro
from poco.geometry import add_gaussian_noise
from poco.mesher import GridSpec, MeshingStats
from poco.training import train
from poco.tta import encode_with_tta, plan_subsamples

sphere = AnalyticField.sphere()
cfg = PocoConfig(n=16, k=32, h=16, L=2, k_enc=12, hidden=32)

# %%
model = PocoModel(cfg, seed=0)
t0 = time.perf_counter()
with threadpool_limits(1):
    losses = train(model, sphere, 1500, batch_points=512, batch_queries=200, seed=0, sigma_noise=0.02)
print(f"{time.perf_counter() - t0:.0f}s")
print("loss by 100 steps:", np.round(losses.reshape(-1, 100).mean(axis=1), 3))

# %% [markdown]
# Reconstruct an unseen noisy sampling. The grid covers the cloud's box
# inflated by 5%; the input points seed the region growing.

# %%
scan = add_gaussian_noise(sphere.sample_surface(2000, seed=7), 0.02, seed=8)
grid = GridSpec.from_bounds(scan.aabb().inflated(0.05), 64)
stats = MeshingStats()
mesh = mc_regro(ModelField(model, encode(model, scan)), grid, scan, stats=stats)
print(len(mesh), "triangles,", stats.corner_evaluations, "corner evaluations")
print(evaluate_reconstruction(mesh, sphere, 50_000, 50_000, seed=0, fs_threshold=0.02).as_text())

# %% [markdown]
# Test-time augmentation: encode overlapping subsamples and average each
# point's latents over every subsample it appeared in.

# %%
plan = plan_subsamples(len(scan), 512, n_view=3, seed=0)
print(len(plan.subsamples), "subsamples, counts", plan.counts.min(), "-", plan.counts.max())
field = ModelField(model, encode_with_tta(model, scan, plan))
mesh_tta = mc_regro(field, grid, scan)
print(evaluate_reconstruction(mesh_tta, sphere, 50_000, 50_000, seed=0, fs_threshold=0.02).as_text())

# %% [markdown]
# On this small model, averaging over sparser subsamples does not help and
# can hurt. Each subsample has a different point density than the full scan,
# and the model has seen only 512-point clouds.
