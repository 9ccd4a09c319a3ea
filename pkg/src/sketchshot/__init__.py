"""sketchshot: incremental photo classification taught from a few sketches."""

__version__ = "0.1.0"
