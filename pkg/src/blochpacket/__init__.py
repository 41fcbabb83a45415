"""Semiclassical Bloch wavepacket dynamics for the two-scale Schrodinger equation."""
