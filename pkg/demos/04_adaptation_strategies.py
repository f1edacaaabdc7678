"""Compare the adaptation strategies on severity-5 streams.

source: frozen model, running statistics. norm: per-batch statistics,
no updates. tent: entropy minimization over the BN affine parameters.
ttc: tent plus flip-averaged label assignment, entropy-power sample
weights, and gradient accumulation.
"""

import numpy as np

from ttalab import AdaptationConfig, Corruption, StreamProtocol
from ttalab.benchmark import (CORRUPTION_KINDS, generate_dataset, stream_eval,
                              train_source)

train = generate_dataset(k=3, m=3000, seed=0)
net = train_source(train, epochs=20, seed=0)
test = generate_dataset(k=3, m=3000, seed=777)

seeds = range(5)
print(f"{'strategy':10s} " + " ".join(f"{k[:8]:>8s}" for k in CORRUPTION_KINDS)
      + "     mean")
for strategy in ("source", "norm", "tent", "tent-filtered", "ttc"):
    config = AdaptationConfig(strategy=strategy)
    row = []
    for kind in CORRUPTION_KINDS:
        accs = [stream_eval(net, test, Corruption(kind, 5),
                            StreamProtocol(batch_size=100, seed=s),
                            config).accuracy for s in seeds]
        row.append(np.mean(accs))
    print(f"{strategy:10s} " + " ".join(f"{a:8.4f}" for a in row)
          + f" {np.mean(row):8.4f}")

print("\nttc component ablation on gaussian noise (severity 5):")
variants = {
    "full ttc": {},
    "no rla": {"rla_enabled": False},
    "no wa": {"wa_enabled": False},
    "no ga": {"ga_enabled": False},
}
for label, flags in variants.items():
    config = AdaptationConfig(strategy="ttc", **flags)
    accs = [stream_eval(net, test, Corruption("gaussian_noise", 5),
                        StreamProtocol(batch_size=100, seed=s),
                        config).accuracy for s in seeds]
    print(f"  {label:10s} {np.mean(accs):.4f}")
