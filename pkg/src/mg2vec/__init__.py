"""K-mer representation learning for metagenome reads.

Learns per-k-mer vectors from unlabeled reads by combining embeddings of a
global weighted co-occurrence graph with a masked-token transformer, then
uses the (concatenated) vectors for supervised read classification and
unsupervised metagenome segmentation.
"""

__version__ = "0.1.0"

from mg2vec.errors import Mg2vecError, ValidationError

__all__ = ["Mg2vecError", "ValidationError", "__version__"]
