"""Group-aware distribution shift explanations.

Learns parameterized mappings from a source dataset toward a target
dataset, optionally optimizing worst-group objectives, and scores the
result with PercentExplained, worst-group PercentExplained, feasibility,
and robustness metrics.
"""

__version__ = "0.1.0"

from .errors import GroupShiftError  # noqa: F401
