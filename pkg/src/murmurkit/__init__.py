"""murmurkit: phonocardiogram murmur detection toolkit.

The processing chain is WAV decode -> resample -> outlier clipping ->
Butterworth band-pass -> 5 s segmentation -> Morlet CWT scalogram ->
FunnelCNN classifier, with an int8 post-training quantized runtime for
edge-style inference.
"""

__version__ = "0.1.0"
