"""Dataset handling, synthetic corpus generation, experiment orchestration,
the command-line interface, and the annotation HTTP service."""

from .manifest import DatasetManifest, ManifestRecord, load_manifest
from .splits import JointSample, SplitSpec, augment_flips, split_dataset
from .synth import SynthConfig, synth_generate

__all__ = [
    "DatasetManifest",
    "ManifestRecord",
    "load_manifest",
    "SplitSpec",
    "JointSample",
    "split_dataset",
    "augment_flips",
    "SynthConfig",
    "synth_generate",
]
