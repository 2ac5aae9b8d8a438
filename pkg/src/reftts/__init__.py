"""reftts: desk-scale low-resource TTS with frozen-reference pseudo-labeling.

A FastSpeech2-style acoustic backbone is pretrained on plentiful source
speakers, then fine-tuned on a small target-speaker set while a frozen copy
of the pretrained model supplies pseudo-label mel targets through a weighted
reference loss.
"""

__version__ = "0.1.0"

FORMAT_VERSIONS = {"checkpoint": "RMKD1", "mel": "MEL1", "corpus": "CORP v1"}
