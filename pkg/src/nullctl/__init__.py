"""Numerical laboratory for boundary null controllability of a coupled 2x2 parabolic system."""
