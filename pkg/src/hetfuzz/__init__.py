"""Differential fuzzing of a simulator's host and device backends.

The pipeline: ``seedgen`` builds validated seed scripts, ``extractor``
stubs units the seeds never reach, ``fuzzer`` mutates scripts through a
grammar while ``profiler`` steers line selection by kernel activity, and
``diffdrive`` runs both backends of ``minisim`` and compares their output.
"""

__version__ = "0.1.0"
