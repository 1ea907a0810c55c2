"""Topic-controlled abstractive summarization at desk scale.

Pipeline: LDA topic modeling with model selection, topical word-vector
guidance, a feed-forward guidance reconstructor, a miniature
encoder-decoder transformer with topical cross-attention, constrained
beam decoding, and ROUGE / topic-focus evaluation.
"""

__version__ = "0.1.0"
