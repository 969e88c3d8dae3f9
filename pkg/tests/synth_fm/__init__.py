"""Tests for synth_fm."""
