"""Aspect sentiment triplet extraction with a coupled table and sequence encoder.

Modules: ``numerics`` (tape autodiff on numpy), ``corpus`` (data, labels,
batches), ``cells`` (GRU and MDGRU), ``model``, ``decode``, ``evaluate``,
``train``, ``checkpoint``, ``plots`` and ``cli``.
"""

__version__ = "0.1.0"
