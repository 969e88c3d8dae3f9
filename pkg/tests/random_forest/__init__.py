"""Tests for random_forest."""
