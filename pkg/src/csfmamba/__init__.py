"""Cross-state fusion Mamba classifier for paired HSI/LiDAR rasters."""

from .model import CSFMamba, ModelConfig, count_params_flops, tiny_config

__version__ = "0.1.0"
__all__ = ["CSFMamba", "ModelConfig", "count_params_flops", "tiny_config"]
