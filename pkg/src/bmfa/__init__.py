"""Speaker-embedding network with bidirectional multiscale feature aggregation.

Pipeline: waveform -> log-mel features -> ResNet34 backbone -> top-down and
bottom-up aggregation with attentional fusion -> 512-dim embedding -> cosine
scoring with EER/minDCF. Every differentiable kernel ships its hand-derived
backward pass, verifiable against central finite differences.
"""

__version__ = "0.1.0"
