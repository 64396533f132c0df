"""Multivariate two-sample testing of posturographic features (ts-AUC)."""

__version__ = "0.1.0"
TOOL_NAME = "tsauc-lab"
