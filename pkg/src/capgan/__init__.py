"""Adversarially trained audio captioning at desk scale.

A caption generator (encoder + noise-conditioned transformer decoder) is
pretrained by maximum likelihood and then refined with self-critical policy
gradients against a GRU discriminator, a frozen semantic evaluator, and a
CIDEr language evaluator. Includes the full accuracy/diversity metric suite
and a reproducible CLI pipeline over synthetic or imported corpora.
"""

__version__ = "0.1.0"
