"""Readers and writers for BrainVision EEG, NIfTI-1 volumes and result tables."""

from .brainvision import (
    BrainVisionHeader,
    ChannelInfo,
    ParseReport,
    load_brainvision,
    parse_brainvision,
    read_header,
    write_brainvision,
)
from .nifti import NiftiHeader, read_nifti, read_nifti_array, read_statmap, write_nifti
from .tables import export_table, read_csv_table

__all__ = [
    "BrainVisionHeader",
    "ChannelInfo",
    "ParseReport",
    "load_brainvision",
    "parse_brainvision",
    "read_header",
    "write_brainvision",
    "NiftiHeader",
    "read_nifti",
    "read_nifti_array",
    "read_statmap",
    "write_nifti",
    "export_table",
    "read_csv_table",
]
