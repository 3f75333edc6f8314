"""Export LLaMA-family checkpoints and text corpora to the pruning engine's
file formats."""

from .convert import convert_model
from .corpus import convert_corpus
from .formats import FormatError, checkpoint_bytes, model_fingerprint, stream_bytes
from .manifest import ConversionError, ConversionManifest, default_tensor_map

__version__ = "0.1.0"
