"""Sequential posterior simulation with group-based numerical standard errors."""

from .design import DesignRecord, read_design, write_design
from .diagnostics import (EvidenceReport, MomentReport, evidence_accumulate, log_score,
                          moment_report, nse_from_group_means, pit, predictive_likelihood, rne)
from .engine import EngineConfig, HybridReport, run_adaptive, run_hybrid, run_nonadaptive
from .mutation import MPhaseRule
from .particles import ModelSpec, ParticleSystem, WeightCollapseError
from .resampling import ResampleScheme

__version__ = "0.1.0"
