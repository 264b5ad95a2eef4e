"""Deterministic simulation of a geo-replicated commit protocol.

Transactions execute under local two-phase locking in their home data
center, then every data center re-executes them and votes; a wide-area
generalized consensus round over commit/abort verdicts decides in one
round trip on top of the hand-off broadcast.  Everything runs on a
single-threaded discrete-event network so each scenario is replayable
from its seed.
"""

__version__ = "0.1.0"
