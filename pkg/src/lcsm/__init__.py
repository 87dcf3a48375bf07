"""Linear complexity sequence models expressed through one Expand-Oscillation-Shrink recurrence."""

from lcsm.codes import ModelCode, parse_code, format_code
from lcsm.scan import ScanInputs, StepGrads, forward_scan, backward_scan, oracle_forward

__all__ = [
    "ModelCode",
    "parse_code",
    "format_code",
    "ScanInputs",
    "StepGrads",
    "forward_scan",
    "backward_scan",
    "oracle_forward",
]

__version__ = "0.1.0"
