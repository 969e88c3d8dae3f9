"""Tests for quality_pipeline."""
