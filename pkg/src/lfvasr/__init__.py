"""Multilingual CTC acoustic modeling with language feature vectors.

A compact, numpy-based training and decoding stack: a shared
convolution + bidirectional LSTM network trained with CTC over several
languages at once, a bottleneck language-identification network whose
activations (language feature vectors) condition the acoustic model
either by input appending or by multiplicative hidden-layer modulation,
plus a synthetic multilingual corpus generator, a character RNN
language model with shallow-fusion decoding, and error-rate scoring.
"""

__version__ = "0.1.0"
