"""Multi-view spectrogram transformer for respiratory sound classification.

Subpackages cover the whole pipeline: WAV ingestion and cycle slicing
(audio_io), the mel-spectrogram front end (dsp), a reverse-mode autodiff
tensor core (tensor, optim), the multi-view encoder (model), gated fusion and
classification (fusion), training plus ICBHI-style metrics (train_eval), and
the command line (cli).
"""

__version__ = "0.1.0"

from .tensor import Tensor, backward, no_grad, parameter  # noqa: F401
