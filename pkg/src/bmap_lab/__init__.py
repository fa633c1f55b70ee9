"""bmap-lab: numerical toolkit for multitype branching Levy processes."""

__version__ = "0.1.0"
