"""Directed small-world graphs and the Granger prior.

Builds the reference 100-node topology, then recovers a known driver
edge from a two-node vector-autoregression and shows that constant
channels degrade gracefully.
"""

import numpy as np

from sheafcast import generate_small_world, granger_prior
from sheafcast.graphs import granger_score_matrix

graph = generate_small_world(n=100, k=8, beta=0.1, seed=7)
print(f"small-world graph: {graph.n_nodes} nodes, {graph.n_edges} directed edges")
out_deg = np.bincount(graph.edge_array()[:, 0], minlength=100)
print(f"out-degree is uniform at k/2: min {out_deg.min()}, max {out_deg.max()}")

# x0 is driven by x1's past; x1 is pure noise
rng = np.random.default_rng(0)
t_len = 200
x1 = rng.normal(size=t_len)
x0 = np.zeros(t_len)
for t in range(1, t_len):
    x0[t] = 0.9 * x1[t - 1] + 0.3 * rng.normal()
context = np.stack([x0, x1])

scores = granger_score_matrix(context, lag_order=3)
print(f"\nscore(driver 1 -> 0) = {scores[1, 0]:.3f}")
print(f"score(reverse 0 -> 1) = {scores[0, 1]:.3f}")

prior = granger_prior(context, lag_order=3, top_k=1)
print(f"prior keeps the top edge per node: {prior.edges}")

flat = np.vstack([np.ones(t_len), 2.0 * np.ones(t_len)])
degenerate = granger_prior(flat, lag_order=3, top_k=1)
print(f"\nconstant channels never crash; scores = {degenerate.scores}")
