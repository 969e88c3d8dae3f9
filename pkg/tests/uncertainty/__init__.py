"""Tests for uncertainty."""
