"""posslog: learning stratified possibilistic logic theories from
relational data, with SAT-based MAP inference."""

__version__ = "0.1.0"
