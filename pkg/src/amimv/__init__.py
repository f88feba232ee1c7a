"""Desk-scale contrastive pretraining lab: asymmetric multi-image
multi-view objectives, class-imbalance analysis, and linear-probe
evaluation on small image datasets."""

__version__ = "0.1.0"
