"""Audit toolkit for demographic variance compression, run-to-run stability,
symptom networks, clinical logic and mean calibration of generated
questionnaire responses."""

__version__ = "0.1.0"
RECORD_FORMAT = "1"
REPORT_FORMAT = "1"
