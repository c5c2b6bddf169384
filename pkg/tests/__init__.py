"""
Tests for the szloca localization pipeline
"""
