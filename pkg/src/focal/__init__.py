"""Focused-convolution CNN inference: dense -> fCNN conversion and planning."""
from .graph import ModelGraph, convert_to_fcnn, count_macs, downsample_points, forward
from .kernel import (
    AoiMask,
    BlockConfig,
    ConvParams,
    align_mask,
    count_focused_macs,
    dense_conv,
    focused_conv,
    im2col,
    resize_mask,
    threshold_aoi,
)
from .manifest import model_load, model_save
from .tensor import channel_sum, pad2d, tensor_read, tensor_write

__version__ = "0.1.0"
