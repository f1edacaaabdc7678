"""Train a source model, then watch each corruption erode its accuracy.

Higher severity never helps: the source model, evaluated with its frozen
running statistics, degrades monotonically on average.
"""

from ttalab import AdaptationConfig, Corruption, StreamProtocol
from ttalab.benchmark import (CORRUPTION_KINDS, evaluate_accuracy,
                              generate_dataset, stream_eval, train_source)

train = generate_dataset(k=3, m=3000, seed=0)
net = train_source(train, epochs=20, seed=0)
test = generate_dataset(k=3, m=3000, seed=777)
print(f"clean held-out accuracy: {evaluate_accuracy(net, test):.4f}\n")

config = AdaptationConfig(strategy="source")
print(f"{'corruption':15s} " + " ".join(f"sev{s}" for s in range(1, 6)))
for kind in CORRUPTION_KINDS:
    row = []
    for severity in range(1, 6):
        report = stream_eval(net, test, Corruption(kind, severity),
                             StreamProtocol(batch_size=100, seed=0), config)
        row.append(report.accuracy)
    print(f"{kind:15s} " + " ".join(f"{a:.3f}" for a in row))
