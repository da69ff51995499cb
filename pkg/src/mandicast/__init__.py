"""mandicast: produce price forecasting over sparse market price panels.

Pipeline: complete the sparse price/volume panels (impute), average them into
q-day steps (features), train per-market direction forests on lagged changes
and volumes pooled from nearby markets (models), and read forecasts back as
weighted historical neighbors with price intervals (kernel). The evaluate,
store, pipeline, service, and cli modules wrap this in a walk-forward
evaluation harness, an embedded store, a six-stage daily batch job, an HTTP
API, and an operator CLI.
"""

__version__ = "0.1.0"
