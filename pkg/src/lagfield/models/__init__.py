"""Data models for lagfield: meshes, field grids, densities and run records."""
