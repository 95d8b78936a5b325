"""Partially observable Action-Evolution Petri nets for task-assignment decisions."""
__version__ = "0.1.0"
