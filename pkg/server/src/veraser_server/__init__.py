"""Reference server for the VE-testing wire protocol, backed by stub models.

Implements the six backend roles (extract, detect, ground, inpaint,
synonym, predict) from the other side of the wire: a rule-based extractor,
ground-truth-file detector and grounder, a color-fill inpainter, a lexicon
synonymizer, and a configurable predictor stub. Real models plug in by
replacing the per-role functions in ``stubs``.
"""

__version__ = "0.1.0"
