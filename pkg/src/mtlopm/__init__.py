"""Simulated IM/DD optical performance monitor.

Pipeline: ``sigsim`` (PAM waveforms at a set OSNR) -> ``dsp`` (DC removal,
2 sps resampling, blind CMA) -> ``features`` (amplitude histograms and the
labeled dataset) -> ``mtlnet`` (multi-task network) -> ``experiments``
(metrics, seeds, sweeps). ``cli`` wires it together.
"""

__version__ = "0.1.0"
