"""bmap-lab test suite."""
