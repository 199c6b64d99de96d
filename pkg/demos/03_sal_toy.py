"""
A min-max game against frozen label codes
==========================================

A discriminator learns to tell label codes from the output of an affine
generator. When the generator matches the code distribution the
discriminator is reduced to guessing, so its held-out accuracy sits near 0.5.
"""

import numpy as np

from mpasal import toy_equilibrium

out = toy_equilibrium(seed=0)
d, g = np.array(out["d_losses"]), np.array(out["g_losses"])

# at chance the discriminator loss is 2 ln 2 and the generator loss ln 2
for start in range(0, len(d), 400):
    print("steps %4d-%4d  L_d %.3f  L_g %.3f" % (start, start + 399, d[start:start + 400].mean(),
                                                 g[start:start + 400].mean()))
print("reference      L_d %.3f  L_g %.3f" % (2 * np.log(2), np.log(2)))
print("held-out discriminator accuracy: %.3f" % out["accuracy"])
print("encoder untouched:", out["encoder_unchanged"])
