"""Angle, delay and Doppler estimators."""
