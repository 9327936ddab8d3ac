"""Metamorphic-testing harness for visual entailment systems.

Generates new tests from entailment-labeled premise/hypothesis pairs by
erasing aligned objects from the image, the sentence, or both, derives the
expected relationship for each perturbation, and reports how often a system
under test violates it.
"""

__version__ = "0.1.0"
