"""Acute-care-utilisation risk prediction from clinical notes and structured
health data: text features, sparse logistic models, an ordinal
cumulative-link model and clinical evaluation tools."""

__version__ = "0.1.0"
