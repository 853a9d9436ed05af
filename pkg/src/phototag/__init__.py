"""phototag: a lightweight tag-prediction engineering toolkit.

Covers the full pipeline: an architecture notation with geometric expansion,
multiply-add/parameter accounting, a self-contained autodiff engine and
trainer for the network family, noisy multilabel training via a randomized
softmax, tag vocabulary mining from user-generated photo metadata, ranking
metrics, and human-in-the-loop posterior calibration.
"""

__version__ = "0.1.0"

from importlib import resources


def fixture_path(*parts: str):
    """Path to a packaged fixture file (arch files, rule lists, corpora)."""
    p = resources.files("phototag").joinpath("fixtures", *parts)
    return p
