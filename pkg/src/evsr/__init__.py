"""Efficient video super-resolution toolkit.

Subpackages by layer, bottom up:

- frame_io   -- Y4M / raw planar 4:2:0 readers and writers (Frame420, ClipHeader)
- resample   -- Lanczos / bicubic / nearest scalers and 4:2:0 <-> 4:4:4 lifts
- nn_core    -- rank-4 float32 tensors, layer ops, graph executor, params/MACs accounting
- reparam    -- multi-branch training blocks fused into single 3x3 convolutions
- zoo        -- model builders for the challenge architectures plus a clip driver
- quality    -- PSNR-Y / SSIM / MS-SSIM and the training loss formulas
- bench      -- CRF sweep harness, reports, baseline comparison
- figures    -- matplotlib renderings of sweep reports
- cli        -- the `evsr` command line front end
"""

__version__ = "0.1.0"
