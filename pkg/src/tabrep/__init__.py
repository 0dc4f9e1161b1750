"""Schema-free tabular representation learning.

Rows become sequences of per-cell feature vectors (gated name/dtype fusion
plus value linking), a Transformer encoder summarizes them behind a [CLS]
vector, and a prompt-conditioned LSTM decoder fills masked cells, classifies,
regresses, and generates. Ships with masked-cell and contrastive pretraining,
prompt-based finetuning, an HTTP service, and a CLI.
"""

__version__ = "0.1.0"

from .model import EncoderConfig, Model  # noqa: F401
from .table import DataType, Table, load_csv, loads_csv, write_csv  # noqa: F401
from .vocab import Vocabulary, build_vocab  # noqa: F401
