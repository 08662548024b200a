"""
Configuration module for CaviLab.
Holds the numerical defaults shared by the library and the CLI.
"""

import os
from typing import Any, Dict, Optional, Tuple

import numpy as np
import psutil


def _env_int(name: str) -> Optional[int]:
    value = os.environ.get(name)
    if value is None or not value.strip():
        return None
    try:
        parsed = int(value)
    except ValueError:
        return None
    return parsed if parsed > 0 else None


class Config:
    """Library configuration class."""

    # Runs
    STOP_TOL = 1e-12
    MAX_ITER = 1000
    # Ratios are only reported while the previous total divergence exceeds this floor
    RATIO_FLOOR = 1e2 * float(np.finfo(float).eps)
    DIVERGENCE_THRESHOLD = 1e12
    STAGNATION_RTOL = 1e-12

    # Fixed points
    FIXED_POINT_TOL = 1e-12
    FIXED_POINT_MAX_ITER = 10000

    # Two-point probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP]
    PROB_CLAMP = 1e-12

    # Initialization: q* means shifted by INIT_SCALE posterior standard deviations
    INIT_SCALE = 5.0

    # Analysis
    VERIFY_TOLERANCE = 1e-9
    GCORR_BUDGET = 2000
    GCORR_ALPHAS: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    MEANPREC_OMEGA = 0.1
    POWER_ITERATION_THRESHOLD = 500

    # Harness
    SWEEP_MAX_POINTS = 10_000
    FLOAT_DIGITS = 17
    TRAJECTORY_FILE = "trajectory.csv"
    REPORT_FILE = "report.json"
    SWEEP_FILE = "sweep.csv"

    ENV = os.environ.get("CAVI_LAB_ENV", "development")

    @classmethod
    def threads(cls) -> int:
        """Worker count for sweeps and ensembles, capped by CAVI_LAB_THREADS."""
        cap = _env_int("CAVI_LAB_THREADS")
        if cap is not None:
            return cap
        return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1

    @classmethod
    def get_config(cls) -> Dict[str, Any]:
        """Get all configuration values as a dictionary."""
        return {
            "STOP_TOL": cls.STOP_TOL,
            "MAX_ITER": cls.MAX_ITER,
            "RATIO_FLOOR": cls.RATIO_FLOOR,
            "DIVERGENCE_THRESHOLD": cls.DIVERGENCE_THRESHOLD,
            "STAGNATION_RTOL": cls.STAGNATION_RTOL,
            "FIXED_POINT_TOL": cls.FIXED_POINT_TOL,
            "FIXED_POINT_MAX_ITER": cls.FIXED_POINT_MAX_ITER,
            "PROB_CLAMP": cls.PROB_CLAMP,
            "INIT_SCALE": cls.INIT_SCALE,
            "VERIFY_TOLERANCE": cls.VERIFY_TOLERANCE,
            "GCORR_BUDGET": cls.GCORR_BUDGET,
            "GCORR_ALPHAS": cls.GCORR_ALPHAS,
            "MEANPREC_OMEGA": cls.MEANPREC_OMEGA,
            "SWEEP_MAX_POINTS": cls.SWEEP_MAX_POINTS,
            "FLOAT_DIGITS": cls.FLOAT_DIGITS,
            "THREADS": cls.threads(),
            "ENV": cls.ENV,
        }

