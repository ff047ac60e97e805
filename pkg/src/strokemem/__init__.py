"""Simulation, decoding and bound checks for a hierarchical stroke/concept associative memory."""
