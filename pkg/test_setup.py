#!/usr/bin/env python3
"""
Check that the runtime stack is installed and the package imports
"""
import importlib

import pytest


@pytest.mark.parametrize("module", ["numpy", "scipy.signal", "scipy.stats", "pandas", "joblib", "dotenv"])
def test_runtime_stack_imports(module):
    importlib.import_module(module)


def test_package_imports():
    import tsauc_lab
    from tsauc_lab import cli

    assert tsauc_lab.TOOL_NAME == "tsauc-lab"
    assert callable(cli.main)
