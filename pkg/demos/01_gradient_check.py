"""
Checking the tape against finite differences
============================================

Every gradient the attack uses comes from the reverse-mode tape in
``pgdlab.tensor``.  This script builds a small convolutional net, asks the
tape for d(loss)/d(input), and compares a few entries with central
differences.
"""

# %% A small net and a two-image batch
import numpy as np

from pgdlab.classifier import ClassifierModel
from pgdlab.tensor import Tape, Tensor, backward, softmax_cross_entropy

model = ClassifierModel.build("conv3x3x4-relu-pool-flatten-dense8-relu-dense3", (8, 8, 1), 3, seed=1)
rng = np.random.default_rng(0)
x = rng.uniform(size=(2, 8, 8, 1))
labels = [0, 2]
print(model.architecture, "with", model.num_parameters, "parameters")


# %% Analytic gradient from one forward pass and one backward sweep
def loss_at(images):
    return softmax_cross_entropy(model.logits(Tensor(images)), labels).item()


xt = Tensor(x)
with Tape() as tape:
    loss = softmax_cross_entropy(model.logits(xt), labels)
grad = backward(tape, loss)[xt]
print("loss", loss.item())

# %% Central differences on a handful of pixels
h = 1e-4
for idx in [(0, 0, 0, 0), (0, 3, 4, 0), (1, 7, 7, 0), (1, 2, 5, 0)]:
    up, down = x.copy(), x.copy()
    up[idx] += h
    down[idx] -= h
    numeric = (loss_at(up) - loss_at(down)) / (2 * h)
    print(f"pixel {idx}: tape {grad[idx]: .10e}  finite diff {numeric: .10e}")
