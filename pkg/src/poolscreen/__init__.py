"""Two-stage adaptive pooled testing under multiplicative noise.

Simulation of pooling schemes (individual, Dorfman, and three two-stage
quantitative designs), sparse recovery from noisy pooled readings, sensing
matrix construction, and a Monte-Carlo harness with a command-line front end.
"""

__version__ = "0.1.0"
