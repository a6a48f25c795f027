"""Beat-level atrial-fibrillation risk analysis on single-lead sinus-rhythm ECG."""

__version__ = "0.1.0"
