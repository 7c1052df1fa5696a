"""
Interaction Kernel Learner

Learns pairwise interaction kernels of first-order heterogeneous agent systems
from observed trajectories by least squares over piecewise-polynomial spaces.
"""

__version__ = "1.0.0"
__author__ = "Interaction Kernel Learner Team"
