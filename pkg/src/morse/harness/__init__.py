"""Experiment driver: config files, checkpoints, pipelines and the command line."""
