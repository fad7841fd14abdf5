"""Experiment harness: configuration, runners, figures and the command line."""
