"""Tests for metrics."""
