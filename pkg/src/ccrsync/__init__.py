"""Timing synchronisation over a retroreflector-array quantum link."""
