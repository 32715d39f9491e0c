"""Hierarchical sales forecasting with seasonal ARIMA and forecast reconciliation."""
from htsrecon.hierarchy import (Hierarchy, Panel, SummingMatrix, aggregate_bottom,
                                build_summing_matrix, check_coherence)

__version__ = "0.1.0"

__all__ = ["Hierarchy", "Panel", "SummingMatrix", "aggregate_bottom", "build_summing_matrix",
           "check_coherence"]
