"""Self-correcting encoder translation: noise synthesis, joint training, E2E and iterative-edit decoding."""

__version__ = "0.1.0"
