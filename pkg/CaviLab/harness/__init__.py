"""
Reproducibility surface of the library: experiment configuration, output files and the
bodies of the ``run``, ``gcorr``, ``sweep`` and ``oracle-check`` commands.
"""

from CaviLab.harness.commands import (
    ExitCode,
    RunResult,
    cmd_gcorr,
    cmd_oracle_check,
    cmd_run,
    cmd_sweep,
    execute_run,
    gcorr_summary,
    sweep_rows,
)
from CaviLab.harness.config import (
    ExperimentConfig,
    GCorrOptions,
    SweepOptions,
    load_config,
    load_oracle_options,
)

__all__ = [
    'ExitCode',
    'ExperimentConfig',
    'GCorrOptions',
    'RunResult',
    'SweepOptions',
    'cmd_gcorr',
    'cmd_oracle_check',
    'cmd_run',
    'cmd_sweep',
    'execute_run',
    'gcorr_summary',
    'load_config',
    'load_oracle_options',
    'sweep_rows',
]
