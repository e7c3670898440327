"""Experiment configuration, campaigns, oracle suites and the CLI."""
