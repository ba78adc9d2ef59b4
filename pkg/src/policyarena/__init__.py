"""policyarena: pairwise-preference policy ranking and the numerical side of
a video-to-simulation evaluation pipeline.

Subpackages:
  ranking   Bradley-Terry MLE, sandwich covariance, confidence intervals
  progress  frame-score shuffle contract, aggregation, SEM
  perturb   background / color / object-pose scene perturbations
  geometry  unprojection, orbit views, SVD registration, calibration loss
  sysid     PD gain identification by simulated annealing
  service   event-sourced comparison arena with an HTTP API
  cli       batch entry points (arena, perturb, sysid)
"""

from . import errors, geometry, perturb, progress, ranking, sysid

__all__ = ["errors", "geometry", "perturb", "progress", "ranking", "sysid"]
__version__ = "0.1.0"
