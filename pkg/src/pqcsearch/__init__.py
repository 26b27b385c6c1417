"""Reinforcement-learning architecture search for quantum data-encoding circuits."""
