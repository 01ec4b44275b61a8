"""Deterministic proof-of-useful-work blockchain simulator.

The package models a permissioned chain whose block production is driven by
seeded Monte Carlo work, with a root authority that validates miner results
by replication, decoy spot-checks, or comparison against reference data.
Everything is reproducible: a scenario file plus a seed determines every
emitted byte.
"""

__version__ = "0.1.0"
