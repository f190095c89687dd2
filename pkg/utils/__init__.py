"""File I/O: models, result records, trajectories and digests."""
