"""Unified multi-positive contrastive learning at desk scale.

Subpackage map:
  numeric     dense layers, AdamW, finite-difference oracle
  augment     augmentation instructions, policies, encoding, application
  encoders    the five networks and the awareness wiring
  similarity  domain routing, temperatures/offsets, score matrices
  losses      pair sets, domain weights, the four contrastive losses
  world       deterministic synthetic image-text pairs + misalignment probe
  training    batch assembly, the training loop, retrieval/probe/density
  ablation    multi-seed grids over one config axis
  config      versioned config schema, YAML loading, overrides
  cli         operator entry point
"""

from .config import RunConfig, default_config, load_config
from .training import TrainResult, train

__all__ = ["RunConfig", "TrainResult", "default_config", "load_config", "train"]

__version__ = "0.1.0"
