"""
advbench - Gradient-based adversarial attacks and a transferability benchmark.

Implements FGSM, I-FGSM, PGD, MI-FGSM, NI-FGSM and the Adam iterative fast
gradient method (AI-FGM) on a small numpy network core, together with the
training, data and benchmark plumbing needed to compare them.

Licensed under MIT License
"""

__version__ = "1.0.0"
__author__ = "advbench Contributors"
