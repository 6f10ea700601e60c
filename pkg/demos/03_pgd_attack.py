"""
One PGD attack, step by step
============================

The attack repeatedly lowers the probability of the class the model
predicted on the clean image, then projects the iterate back into the
L-inf ball of radius epsilon (and into [0, 1]).
"""

# %% Train a model (same recipe as the training demo)
import numpy as np

from pgdlab.attack import AttackConfig, attack_image
from pgdlab.classifier import ClassifierModel, TrainConfig, split, train
from pgdlab.datagen import gen_shape_dataset

ds = gen_shape_dataset(seed=3, n_per_class=125, size=32)
data = split(ds.images, 0.8, seed=1)
model = train(ClassifierModel.build(None, (32, 32, 1), 2, seed=7), data, TrainConfig(epochs=15, seed=11)).model

# %% Pick the least confident correctly classified validation image
from pgdlab.classifier import predict

scored = [(predict(model, im)[0], im) for im in data.validation]
probs, image = min(((p, im) for p, im in scored if p.argmax() == im.label), key=lambda t: t[0].max())
print(image.id, "true class", image.class_name, "clean probabilities", np.round(probs, 4))

# %% Attack it and watch the iterate
distances = []
config = AttackConfig(epsilon=0.05, lr=20.0, max_iter=20)
trace = attack_image(model, image, config,
                     observer=lambda k, x: distances.append(np.abs(x - image.pixels).max()))
for k, (p, d) in enumerate(zip(trace.per_iteration_probabilities, distances), start=1):
    print(f"step {k:2d}  p(original class)={p[trace.original_predicted_class]:.4f}  max|x-x0|={d:.4f}")
print("prediction flipped:", bool((trace.predicted_classes() != image.label).any()))
