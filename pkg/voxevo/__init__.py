"""voxevo: evolve the body and control of voxel soft robots from one implicit genome."""

__version__ = "0.1.0"
