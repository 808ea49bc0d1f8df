"""Tests for the qpat_py package."""
