"""Emergent semantic communication simulation lab."""
