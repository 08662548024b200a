"""
Test suite for CaviLab: divergences, models, schedules, analysis, oracles and the CLI harness.
"""
