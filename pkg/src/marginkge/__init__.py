"""Typed translational KG embeddings with margin sweeps."""
