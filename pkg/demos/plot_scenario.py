"""
Drawing a random network
========================

A scenario is fully determined by the system parameters and an integer
seed.  Here we build the default three-cell layout and look at what the
generator produced.
"""

import numpy as np

from compbeam import SystemParams, generate_scenario
from compbeam.scenario import pathloss_db

params = SystemParams(num_bs=3, antennas_per_bs=4, num_users=6)
ch = generate_scenario(params, seed=0)

print("base stations (km):")
print(np.round(ch.bs_xy, 3))
print("users (km):")
print(np.round(ch.user_xy, 3))

# distance and large-scale loss from every BS to every user
dist = np.linalg.norm(ch.bs_xy[:, None] - ch.user_xy[None], axis=2)
print("pathloss + shadowing (dB):")
print(np.round(pathloss_db(np.maximum(dist, params.min_distance)) + ch.shadowing_db, 1))

# stacked channel, one row per user
print("channel matrix shape:", ch.h.shape)
gain_db = 10 * np.log10(np.sum(np.abs(ch.h) ** 2, axis=1))
print("per-user channel gain (dB):", np.round(gain_db, 1))

# the same seed always gives the same network
assert generate_scenario(params, seed=0) == ch
