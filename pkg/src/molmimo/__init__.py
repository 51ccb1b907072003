"""Simulation and detection toolkit for 2x2 molecular MIMO via diffusion."""

from .topology import LINKS, DomainError, LinkId, OverlapError, Topology, make_topology

__version__ = "0.1.0"
