"""Scenario text builders shared by the scenario, CLI and convergence tests."""

SMALL = """schema_version = 1
name = "small"

[model]
A = 1.0
B = 2.0
D = 1.0
Sigma = 1.0
Sigma0 = 1.0
eta = 1.0
H = 2.0
Q = 1.5
Q_T = 1.5
R = 2.0
T = 1.0

[grid]
M_steps = 40

[graphon]
kernel = "sinusoidal"

[spectral]
method = "analytic"

[mu]
profile = "cosine{c=1,amp=1}"
variance = 0.5

[population]
N = 4
cluster_size = 5
paths = 30
seed = 7

[[deviations]]
kind = "zero_control"

[[deviations]]
kind = "scaled_feedback"
gamma = 1.5

[ladder]
points = [[2, 3], [4, 6], [8, 12]]
"""

BLOWUP = """schema_version = 1
name = "blowup"

[model]
A = 0.0
B = 1.0
R = 0.5
Q = 0.0
Q_T = 1.0
H = -5.0
T = 2.0

[grid]
M_steps = 200

[graphon]
kernel = "rank_one{a=-1}"

[population]
N = 2
cluster_size = 2
paths = 5

[ladder]
points = [[2, 2], [4, 4]]
"""

ZERO = """schema_version = 1
name = "zero"

[model]
A = 0.5
B = 1.0
D = 0.5
H = 1.0
eta = 1.0
Q = 0.0
Q_T = 0.0
Sigma0 = 1.0

[grid]
M_steps = 20

[graphon]
kernel = "rank_one{a=0.5}"
"""
