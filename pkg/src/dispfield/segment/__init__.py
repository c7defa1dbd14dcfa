"""Foreground extraction: colour mixtures, min-cut and GrabCut."""

from .gmm import GmmModel, fit_gmm
from .grabcut import GrabCutResult, apply_mask, compute_beta, energy, grabcut, iou
from .maxflow import brute_force_min_cut, cut_value, max_flow

__all__ = [
    "GmmModel", "GrabCutResult", "apply_mask", "brute_force_min_cut", "compute_beta", "cut_value",
    "energy", "fit_gmm", "grabcut", "iou", "max_flow",
]
