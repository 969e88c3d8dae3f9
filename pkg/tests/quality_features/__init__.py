"""Tests for quality_features."""
