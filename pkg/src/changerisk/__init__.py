"""Pre-deployment incident risk scoring for IT changes.

Predicts, before deployment, the probability (0-100) that a change will
induce a high-priority incident, explains each prediction with per-feature
Shapley attributions, and backtests learned models against a rule-based
baseline under priority-weighted metrics.
"""

__version__ = "0.1.0"
