"""Fourth-order compact finite-difference solvers on deforming curvilinear grids."""

__version__ = "0.1.0"
