"""Vision-tabular multimodal learning that stays trainable and usable when
modalities, individual features, or labels are missing.

Missing inputs are excluded from attention aggregation and from gradient
flow by construction (multiplicative image masking, send/receive-blocked
self-attention, composite masks in the fusion encoder), and a
modality-dropout regularizer stresses the fusion stack with synthetic
missingness during training. A synthetic-data harness reproduces
train-time and test-time missingness stress curves at desk scale.
"""

__version__ = "0.1.0"
