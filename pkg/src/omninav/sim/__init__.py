"""Simulated plant, scenario runner and command-line experiments."""
