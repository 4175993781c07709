"""
Two-branch forward pass and the two losses
==========================================

Training feeds a clean batch and its noisy copy through the same graph
backbone.  The clean branch is pooled to one vector per clip; the noisy
branch is summarized by a GRU and classified.  The contrastive loss asks
each noisy summary to pick out its own clean clip among the batch.
"""

import math
import tempfile
from pathlib import Path

import numpy as np

from pegcn.checkpoint import load_checkpoint, save_checkpoint
from pegcn.losses import LossConfig, cross_entropy, predictive_encoding_loss, total_loss
from pegcn.model import ModelConfig, PeGCNModel, forward_infer, forward_train, pe_matrix
from pegcn.noise import NoiseSpec, inject_noise
from pegcn.skeleton import stack_clips
from pegcn.synth import SyntheticSpec, synth_generate

model = PeGCNModel(ModelConfig.preset("desk", topology="ntu25", num_classes=4, seed=0))
print(f"desk model on ntu25: {model.num_parameters()} parameters")

clips = synth_generate(SyntheticSpec(topology="ntu25", per_class=2, frames=20, seed=5))
clean = stack_clips(clips)
noisy = stack_clips([inject_noise(c, NoiseSpec(5, i)) for i, c in enumerate(clips)])
labels = [c.label for c in clips]

alpha, context, logits = forward_train(model, clean, noisy)
print("pooled clean", alpha.shape, " context", context.shape, " logits", logits.shape)

ce = cross_entropy(logits, labels)
pe = predictive_encoding_loss(alpha, context, pe_matrix(model, model.params))
print(f"CE {ce.item():.4f} (chance {math.log(4):.4f})   PE {pe.item():.4f} (chance {math.log(len(clips)):.4f})")
print("total with lambda 0.1:", total_loss(ce, pe, LossConfig(lam=0.1)).item())

# the N=2 identity fixture: each anchor scores e vs 1
eye = np.eye(2)
print("N=2 hand example:", predictive_encoding_loss(eye, eye, eye).item())

# checkpoints are float32 blobs behind a JSON header
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "m.pegc"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    gap = np.abs(forward_infer(back, clean).data - forward_infer(model, clean).data).max()
    print(f"checkpoint {path.stat().st_size} bytes, max logit change after reload {gap:.2e}")
