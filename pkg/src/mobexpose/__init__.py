"""mobexpose: mobility-aware air pollution exposure assessment.

Fits a hierarchical spatio-temporal Gaussian-process pollution model to
hourly monitor data, predicts concentrations at cell-tower sites, replays
device hand-off trajectories, and quantifies the bias between dynamic
(mobility-aware) and static (night-time local area) exposure assignment.
"""

__version__ = "0.1.0"
