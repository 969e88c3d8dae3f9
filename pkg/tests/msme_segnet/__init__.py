"""Tests for msme_segnet."""
