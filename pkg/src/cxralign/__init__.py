"""Desk-scale contrastive CXR-report alignment toolkit.

Library modules: numerics (dense kernel + gradient checking), report_nlp
(rule-based sentence/negation/label processing), negatives (hard negatives
and benchmark triplets), graphs (report graphs + featurization), encoders
(toy differentiable encoders), loss (dynamic soft-label contrastive loss),
corpus (synthetic data), train_eval (training loop + evaluation suite),
figures (report rendering), cli (command-line frontend).
"""

__version__ = "0.1.0"
