"""Omni-modal tool-integrated reasoning toolkit.

Subsystems: content-addressed media storage and slicing, perception-signal
mining, event-graph construction and fuzzified question generation, the
tool-integrated agent runtime, training-data synthesis (masked SFT and
preference pairs with reference losses), a two-stage evaluation harness, and
the pipeline service (stores, review API, CLI).
"""

__version__ = "0.1.0"
