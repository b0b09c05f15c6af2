"""gatemri: desk-scale testbed for gated-CNN MRI restoration.

Three synthetic tasks share one toolkit: accelerated reconstruction with an
unrolled data-consistency cascade, super-resolution from a retained central
k-space block, and spatially heteroscedastic denoising.  Models are built
from a minimal gated convolutional block and a dynamic-convolution variant,
on top of a small numpy autodiff core.
"""

from .blocks import (Backbone, BackboneConfig, BlockConfig, GatedBlock, LsConv,
                     LsConvConfig, Module, count_parameters, lsconv_aggregate,
                     simple_gate)
from .degrade import (DatasetParams, PhantomSpec, SensitivityLossField, TaskSample,
                      degrade_denoise, degrade_recon, degrade_sr, generate_dataset,
                      load_split, make_g_field, make_phantom)
from .metrics import (MetricsReport, VolumePair, build_report, nmse, psnr, rmse,
                      ssim, ssim_slice_wise, ssim_volumetric)
from .mri import (CoilSensitivities, SamplingMask, apply_mask, complex_abs, expand,
                  fft2c, from_pairs, generate_mask, ifft2c, make_coil_maps, reduce,
                  to_pairs, uniform_coil)
from .tensor import (Parameter, Tensor, backward, concat_channels, conv2d,
                     layer_norm, no_grad, split_channels)
from .training import (Adam, ExperimentConfig, TrainResult, build_model,
                       evaluate_checkpoint, evaluate_split, l1_loss, train)
from .unrolled import (DivergenceError, UnrolledConfig, UnrolledModel, dc_step,
                       reg_step, unroll_forward)

__version__ = "0.1.0"
