"""Encode a tiny trained net as a MILP, tighten its bounds and solve it with the input fixed.

The solver's unit values should reproduce the forward pass exactly.
"""
import numpy as np

from net2milp import (DnnEncodeConfig, InputMode, branch_and_bound, classify, encode_dnn, forward,
                      interval_propagate, lp_tighten)
from net2milp.fixtures import load_digits
from net2milp.lpformat import write_lp
from net2milp.train import Dataset, TrainConfig, accuracy, init_network, train

images, labels = load_digits([0, 1])
data = Dataset.from_labels(images, labels, 2)
cfg = TrainConfig(learning_rate=0.05, epochs=500, seed=0)
net, history = train(init_network("dense-16-8", (8, 8), 2, cfg), data, cfg)
print(f"trained: loss {history[-1]:.4g}, accuracy {accuracy(net, data):.2f}")

# bounds over the whole unit box: interval first, then one LP per unit
lo, hi = np.zeros((8, 8)), np.ones((8, 8))
iv = interval_propagate(net, lo, hi)
lp = lp_tighten(net, lo, hi)
for k in iv.affine_layers():
    a, b = iv.layers[k], lp.layers[k]
    print(f"layer {k}: sum of pre-activation upper bounds {a.pre_hi.sum():9.3f} (interval) "
          f"-> {b.pre_hi.sum():9.3f} (lp)")

x = images[3]
model, varmap = encode_dnn(net, lp, DnnEncodeConfig(input_mode=InputMode.fixed(x)))
print(model.stats())
res = branch_and_bound(model)
out = varmap.values(res.assignment, len(net.layers) - 1)
print("solver outputs ", np.round(out, 6))
print("forward outputs", np.round(forward(net, x).output, 6))
print("label", classify(net, x)[0], "| first LP lines:")
print("\n".join(line[:100] for line in write_lp(model).splitlines()[:6]))
