"""Complex-valued CNN mitigation of mutual interference in FMCW radar.

Modules:

``tensor``      complex tensors, FFT along one axis, CRT1 files
``dsp``         time cube <-> range-Doppler <-> range-Doppler-angle maps
``sim``         synthetic scenes, interferers and datasets
``classical``   zeroing, ramp filtering and IMAT
``ccnn``        complex convolutional networks and checkpoints
``train``       Adam training loop with early stopping
``metrics``     CA-CFAR, peaks, F1 / EVM / PPMSE
``experiment``  evaluation over a test split
``render``      range-angle images and report figures
``cli``         the ``radarim`` command
"""

__version__ = "0.1.0"
