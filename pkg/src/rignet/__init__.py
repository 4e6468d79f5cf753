"""Recurrent iterative gating networks for dense per-pixel labeling."""
