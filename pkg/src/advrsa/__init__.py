"""advrsa: train a toy convolutional classifier, synthesize adversarial images
against it, and quantify representation-perception (dis)association with
representational similarity analysis and sparse forward encoding models.

Everything is double precision and deterministic per seed.
"""

__version__ = "0.1.0"
