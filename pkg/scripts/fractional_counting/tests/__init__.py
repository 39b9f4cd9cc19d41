"""
Test suite for the fractional counting simulator.
"""
