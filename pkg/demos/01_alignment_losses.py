"""
Alignment losses on toy feature batches
=======================================

Two batches of features, one of them recalibrated, and what each alignment
loss has to say about them.
"""
import numpy as np

from tikuda import alignment as al
from tikuda import autodiff as ad

rng = np.random.default_rng(0)
b, p = 64, 8
spacer = "-" * 60

# source features and a target copy with per-column gains and a small rotation
zs = rng.standard_normal((b, p))
gains = np.linspace(0.6, 1.8, p)
theta = np.radians(15)
R = np.eye(p)
R[0, 0] = R[1, 1] = np.cos(theta)
R[0, 1], R[1, 0] = -np.sin(theta), np.sin(theta)
zt = (zs * gains) @ R

# the regularised Gram matrix is always invertible, even when b < p
G_inv = al.tikhonov_inverse(zs[:4], alpha=1.0).data
print("4 samples, 8 features: (Z^T Z + I)^-1 diagonal =", np.round(np.diag(G_inv), 3))
print(spacer)

# haversine similarity bends the cosine so small angles still cost something
for deg in (1, 5, 20, 90):
    c = np.cos(np.radians(deg))
    hs = al.haversine_similarity(ad.Value(np.array([[c]]))).item()
    print(f"angle {deg:>3d} deg: 1 - cos = {1 - c:.5f}   1 - HS = {1 - hs:.5f}")
print(spacer)

angle, scale = al.tikuda_loss(zs, zt)
print(f"TikUDA angle term  : {angle.item():.5f}")
print(f"TikUDA scale term  : {scale.item():.5f}")
cos_angle, _ = al.tikuda_loss(zs, zt, al.AlignmentConfig(similarity="cosine"))
print(f"cosine angle term  : {cos_angle.item():.5f}")
dg_angle, dg_scale = al.dare_gram_loss(zs, zt)
print(f"DARE-GRAM angle    : {dg_angle.item():.5f}, scale {dg_scale.item():.5f}")
print(f"CORAL              : {al.coral_loss(zs, zt).item():.5f}")
print(f"MMD (median width) : {al.mmd_loss(zs, zt).item():.5f}")
print(spacer)

# the same losses on identical batches are exactly zero
a0, s0 = al.tikuda_loss(zs, zs.copy())
print("identical batches -> angle", a0.item(), "scale", s0.item())

# gradients flow back to the features; one descent step shrinks both terms
z = ad.parameter(zt.copy())
a, s = al.tikuda_loss(zs, z)
ad.backward(a + 1e-2 * s)
z_new = zt - 0.05 * z.grad / np.abs(z.grad).max()
a1, s1 = al.tikuda_loss(zs, z_new)
print(f"after one step on the target features: angle {a.item():.5f} -> {a1.item():.5f}, "
      f"scale {s.item():.3f} -> {s1.item():.3f}")
