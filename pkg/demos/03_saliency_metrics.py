"""Why shuffled AUC exists.

A map that only says "look at the centre" scores well under AUC-Judd when the
recorded fixations are centre-biased. Shuffled AUC draws its negatives from
other frames' fixations, which share the same bias, so the centre prior falls
back to chance while a map that tracks the actual targets keeps its score.
"""
import numpy as np

from vsalign import losses as L
from vsalign.data import SynthSpec, rasterize, synth_clip

rng = np.random.default_rng(2)
h, w = 32, 48
yy, xx = np.mgrid[0:h, 0:w]
centre = np.exp(-((yy - h / 2) ** 2 + (xx - w / 2) ** 2) / (2 * 5.0 ** 2))


def centre_biased(n):
    ys = np.clip(np.round(rng.normal(h / 2, 5, n)), 0, h - 1).astype(int)
    xs = np.clip(np.round(rng.normal(w / 2, 5, n)), 0, w - 1).astype(int)
    return list(zip(xs.tolist(), ys.tolist()))


frames = [centre_biased(6) for _ in range(30)]
Q, G = rasterize(frames, (h, w), 2.0)

judd, shuffled, oracle_s = [], [], []
for t in range(len(frames)):
    others = np.delete(Q, t, axis=0).max(axis=0)
    judd.append(L.metric_auc_j(centre, Q[t]))
    shuffled.append(L.metric_sauc(centre, Q[t], others))
    oracle_s.append(L.metric_sauc(G[t] + 1e-3, Q[t], others))
print(f"centre prior   AUC-J {np.mean(judd):.3f}   s-AUC {np.mean(shuffled):.3f}")
print(f"blurred truth  s-AUC {np.mean(oracle_s):.3f}")

# %% the four distribution metrics on a synthetic clip
clip = synth_clip(SynthSpec(n_blobs=2, seed=3), 5, 64, 96)
blurry = np.stack([g + 0.2 for g in clip.G])
for name, pred in (("ground truth", clip.G), ("ground truth + 0.2", blurry), ("uniform noise", rng.uniform(size=clip.G.shape))):
    m = [(L.metric_nss(p, q), L.metric_sim(p, g), L.metric_cc(p, g), L.metric_kl(p, g))
         for p, q, g in zip(pred, clip.Q, clip.G)]
    nss, sim, cc, kl = np.mean(m, axis=0)
    print(f"{name:20s} NSS {nss:6.2f}  SIM {sim:.3f}  CC {cc:.3f}  KL {kl:.3f}")
