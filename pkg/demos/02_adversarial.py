"""Craft and check an adversarial for the ten-class fixture net.

Each pixel may move by at most 0.2; the target class must beat every other
class by 20%. The result is re-checked with the plain forward pass.
"""
import numpy as np

from net2milp import AdversarialConfig, generate_adversarial, verify_adversarial
from net2milp.fixtures import load_digits
from net2milp.train import Dataset, TrainConfig, accuracy, init_network, train

images, labels = load_digits()
data = Dataset.from_labels(images, labels, 10)
# live-output recipe: small positive biases and a zeroed output layer keep ReLUs from dying
cfg = TrainConfig(learning_rate=0.1, epochs=3000, seed=0, bias_init=0.1, output_scale=0.0)
net, _ = train(init_network("dense-12", (8, 8), 10, cfg), data, cfg)
print(f"train accuracy {accuracy(net, data):.2f}")

i = 12
x, label = images[i], labels[i]
acfg = AdversarialConfig()
res = generate_adversarial(net, x, label, acfg)
verdict = verify_adversarial(net, res, x, label, acfg)
print(f"{label} -> {res.achieved_label} (target {res.target}); margin {res.achieved_margin:.4f}; "
      f"sum eps {res.eps_sum:.4f}; max change {res.max_change:.4f}; nodes {res.nodes}")
print("verdict:", "pass" if verdict.passed else verdict.reasons)
print("changed pixels (x100):")
print(np.round((res.image - x) * 100).astype(int))

tight = generate_adversarial(net, x, label, AdversarialConfig(eps_max=0.0))
print("with no pixel budget:", tight.status)
