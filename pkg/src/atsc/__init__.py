"""Adaptive traffic signal control with constrained multi-agent RL.

Subpackages/modules:
    network      road network model, phase tables, document loading
    flow         vehicle demand specification and spawn schedules
    simulator    queue-based discrete-time traffic simulator
    constraints  signal-timing constraint counters and cost signal
    nn           dense networks, Adam, categorical heads, GAE
    trainers     MAPPO-LCE and penalty-reward PPO baselines
    gridgen      synthetic grid network / demand generator
    harness      run configuration and end-to-end experiment driver
    compare      cross-run summary tables
    report       matplotlib figures from run metrics
    cli          command line entry point
"""

__version__ = "0.1.0"
