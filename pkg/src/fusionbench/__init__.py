"""fusionbench: attention-fusion kernels, hand-written gradients, cost
models and a verification/benchmark CLI."""

__version__ = "0.1.0"
