"""Generative template-based event extraction with prefix steering.

The pipeline: an event ontology defines per-type templates; prompts built
from those templates condition a small encoder-decoder LM; generated
answers are parsed back into event records and scored with span-level
trigger/argument criteria.  All differentiable computation runs on the
bundled autodiff core in :mod:`evex.numeric`.
"""

__version__ = "0.1.0"
