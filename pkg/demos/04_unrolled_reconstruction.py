"""Train a small unrolled reconstruction cascade end to end.

Eight cascade iterations alternate an explicit data-consistency step with a
learned image-domain correction; sampled k-space columns are pinned to the
measurements while the network fills in what the mask dropped.  A couple of
minutes of CPU training already beats the zero-filled baseline clearly.
"""

import tempfile
import time
from pathlib import Path

import numpy as np

from gatemri import degrade, mri
from gatemri.tensor import Tensor
from gatemri.training import ExperimentConfig, load_model, train
from gatemri.unrolled import unroll_forward

root = Path(tempfile.mkdtemp(prefix="gatemri_demo_"))
print(f"working under {root}")

degrade.generate_dataset(root / "data",
                         degrade.DatasetParams(task="recon", size=32, seed=11,
                                               acceleration=4, center_fraction=0.08),
                         n_train=24, n_val=16, n_test=0)

cfg = ExperimentConfig(task="recon", model="naf", width=8, enc_blocks=(1, 1),
                       middle_blocks=1, dec_blocks=(1, 1), unroll_T=4, epochs=4,
                       batch_size=2, seed=5, data_root=str(root / "data"),
                       slices_per_volume=8)
t0 = time.perf_counter()
result = train(cfg, root / "run")
print(f"\ntrained in {time.perf_counter() - t0:.0f}s")
print(f"zero-filled baseline: {result.input_val_psnr:.2f} dB")
for row in result.log_rows:
    epoch, loss, psnr, wall = row.split(",")
    print(f"  epoch {epoch}: train L1 {float(loss):.4f}, val PSNR {float(psnr):.2f} dB")
print(f"gain over zero-filled: {result.best_val_psnr - result.input_val_psnr:+.2f} dB")

print("\ndata consistency in action: measured columns stay anchored while the")
print("network synthesizes the dropped ones")
model, _ = load_model(result.best_path)
sample = degrade.load_split(root / "data", "recon", "val")[0]
k_meas = Tensor(mri.to_pairs(sample.degraded, np.float32))
image = unroll_forward(None, k_meas, sample.mask, sample.coils, model)
k_final = mri.fft2c_array(mri.from_pairs(image.data.astype(np.float64)))
k_true = mri.fft2c_array(sample.clean.astype(np.complex128))
kept = sample.mask.kept
err_kept = np.abs(k_final[:, kept] - k_true[:, kept]).mean()
err_dropped = np.abs(k_final[:, ~kept] - k_true[:, ~kept]).mean()
zf_dropped = np.abs(k_true[:, ~kept]).mean()  # zero-filling leaves the full value
print(f"mean |k_hat - k_true|: sampled columns {err_kept:.4f}, "
      f"dropped columns {err_dropped:.4f} (zero-filled left {zf_dropped:.4f})")
