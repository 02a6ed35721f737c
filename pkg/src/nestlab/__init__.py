"""Desk-scale class-incremental segmentation lab.

A numpy implementation of transformation-based new-classifier generation
with cross-task similarity initialization and pre-tuning, trained against
unbiased cross entropy and unbiased knowledge distillation on synthetic
per-pixel data, plus the ablation and verification harness around it.
"""

__version__ = "0.1.0"
