"""Self-supervised edge detection toolkit.

Synthetic pretraining data, homography-adaptation pseudo-labels, a
dual-decoder convolutional model trained with a built-in autodiff engine,
BFS-based output fusion, and boundary-matching evaluation.
"""

__version__ = "0.1.0"
