"""Tests for nn_core."""
