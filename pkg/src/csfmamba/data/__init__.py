from .patches import PatchSet, SplitSpec, extract_patches, gather_patches, pad_cube, split_indices, stratified_split
from .preprocess import (LIDAR_CHANNELS, PcaModel, PreprocessConfig, PreprocessState, Standardizer,
                         apply_preprocess, derive_lidar_channels, fit_pca, fit_preprocess, mi_band_select,
                         mutual_information, pca_reduce)
from .raster import DatasetFormatError, LabelMap, RasterCube, read_dataset, write_dataset
from .synthetic import class_signatures, make_synthetic

__all__ = [
    "PatchSet", "SplitSpec", "extract_patches", "gather_patches", "pad_cube", "split_indices",
    "stratified_split", "LIDAR_CHANNELS", "PcaModel", "PreprocessConfig", "PreprocessState",
    "Standardizer", "apply_preprocess", "derive_lidar_channels", "fit_pca", "fit_preprocess",
    "mi_band_select", "mutual_information", "pca_reduce", "DatasetFormatError", "LabelMap",
    "RasterCube", "read_dataset", "write_dataset", "class_signatures", "make_synthetic",
]
