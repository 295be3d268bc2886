"""Streaming pulsation-map extraction.

Frames pass through a temporal difference-of-Gaussians filter, a per-pixel
Butterworth bandpass and a gamma normalization, yielding one pulsation map
per input frame once the temporal window is full.
"""

__version__ = "0.1.0"

from pulsemap.bandpass import (BandpassDesign, DirectFormBank, SosBank, design_butterworth_bandpass,
                               frequency_response)
from pulsemap.errors import (DimensionMismatchError, FrameFormatError, NumericError,
                             ParameterError, PulsemapError)
from pulsemap.frames import Frame, FrameStream, StreamHeader, read_frame_sequence, write_frame_sequence
from pulsemap.metrics import EnergyConcentration, LatencyStats, energy_concentration, measure_latency
from pulsemap.phantom import (PhantomSpec, PulsatingRing, DriftEdge, SpeckleParams, generate_phantom,
                              default_carotid_phantom, default_radial_phantom)
from pulsemap.pipeline import PipelineConfig, PulsationExtractor, extract_pulsation_map_pipeline
from pulsemap.render import HeatMapLUT, NormalizationParams, PulsationMap, normalize, render_heatmap
from pulsemap.temporal import TemporalKernel, build_dog_kernel, build_kernel, compute_sigma

__all__ = [
    "BandpassDesign", "DirectFormBank", "SosBank", "design_butterworth_bandpass",
    "frequency_response", "DimensionMismatchError", "FrameFormatError", "NumericError",
    "ParameterError", "PulsemapError", "Frame", "FrameStream", "StreamHeader",
    "read_frame_sequence", "write_frame_sequence", "EnergyConcentration", "LatencyStats",
    "energy_concentration", "measure_latency", "PhantomSpec", "PulsatingRing", "DriftEdge",
    "SpeckleParams", "generate_phantom", "default_carotid_phantom", "default_radial_phantom",
    "PipelineConfig", "PulsationExtractor", "extract_pulsation_map_pipeline", "HeatMapLUT",
    "NormalizationParams", "PulsationMap", "normalize", "render_heatmap", "TemporalKernel",
    "build_dog_kernel", "build_kernel", "compute_sigma",
]
