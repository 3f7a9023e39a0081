"""Sequential active domain adaptation on small synthetic benchmarks.

A minimal reverse-mode autodiff core drives four small networks (feature
extractor, classifier, loss predictor, domain discriminator) through an
active learning loop that queries the target samples with the highest
predicted loss and adapts on the unlabeled rest.
"""

__version__ = "0.1.0"
