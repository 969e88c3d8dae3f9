"""Tests for common module."""



