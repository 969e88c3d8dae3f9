"""
Test suite for msme-quality.
"""
