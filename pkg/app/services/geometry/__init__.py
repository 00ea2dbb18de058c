"""Triangle-mesh geometry: I/O, sampling, exact oracle and the procedural object library."""
