"""Offline transformer-encoder embedding exporter producing the
interchange files the classifier package trains on."""

from .exporter import ExportError, ExportReport, ExportSpec, export, read_dataset
from .interchange import FormatError, VerifySummary, verify_interchange, write_interchange

__version__ = "0.1.0"
