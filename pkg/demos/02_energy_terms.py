# %% [markdown]
# # The warp energy, one term at a time
#
# Every term is a sum of squared residuals that are linear in the mesh
# vertices, so the total is a sparse quadratic x^T A x - 2 b^T x + c. This
# demo builds the terms on a small mesh and checks the properties that make
# them useful as regularisers.

# %%
import numpy as np

from cpwstitch import Mesh
from cpwstitch import energy as en

mesh = Mesh((0.0, 0.0), (10.0, 10.0), 4, 6)
rng = np.random.default_rng(0)

# %% [markdown]
# ## Shape preservation
# The similarity term is zero for any rotation, uniform scale and translation
# of the rest mesh, and positive as soon as one vertex moves on its own.

# %%
sim = en.EnergySystem(mesh.n_vertices)
en.add_similarity_term(sim, mesh)
a = np.radians(25)
rot = 1.4 * np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
print("similarity, rotated+scaled mesh:", sim.energy(mesh.rest @ rot.T + (3.0, -2.0)))
bumped = mesh.rest.copy()
bumped[2, 3] += (2.0, 0.0)
print("similarity, one vertex moved 2 px:", sim.energy(bumped))

# %% [markdown]
# ## Straight lines stay straight
# The collinearity term tolerates any affine map but penalises bending.

# %%
col = en.EnergySystem(mesh.n_vertices)
en.add_collinearity_term(col, mesh, [[[2.0, 5.0], [58.0, 35.0]]])
aff = np.array([[1.2, 0.3], [-0.1, 0.9]])
print("collinearity, affine map:", col.energy(mesh.rest @ aff.T))
bent = mesh.rest.copy()
bent[2, 3, 1] += 3.0
print("collinearity, bent mesh:", col.energy(bent))

# %% [markdown]
# ## Solving
# Pull two vertices towards targets with point constraints and let the
# similarity term carry the rest of the mesh along.

# %%
sys_ = en.EnergySystem(mesh.n_vertices)
en.add_similarity_term(sys_, mesh, weight=1.0)
corners = mesh.rest[[0, -1], [0, -1]]
en.add_point_term(sys_, mesh, corners, corners + (5.0, 5.0), weight=100.0)
x = en.solve(sys_).reshape(mesh.rest.shape)
print("mean shift of all vertices:", np.round((x - mesh.rest).reshape(-1, 2).mean(0), 4))
print("energy at the solution:", sys_.quadratic(x))
