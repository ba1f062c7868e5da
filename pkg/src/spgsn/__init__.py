"""Skeleton-parted graph scattering network for 3D motion prediction."""
