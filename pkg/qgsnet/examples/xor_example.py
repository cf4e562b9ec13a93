import logging
from typing import List

import numpy as np

from ..network import NetworkShape, SequenceSample
from ..solver import QgsSettings
from ..trainers import TrainConfig, accuracy, train_qgs

# The zero input reaches no hidden node (no bias), so the lowest reachable cost is 0.125
XOR_SETTINGS = QgsSettings(
    abs_tol=1e-6,
    rel_tol=1e-6,
    grad_tol=1e-4,
    max_time=1e4,
    max_steps=4000,
    escape_radius=0.5,
    max_attempts=40,
)


def create_xor_samples() -> List[SequenceSample]:
    """The four XOR patterns with one-hot targets (class 0 = false, class 1 = true)"""
    patterns = [((0.0, 0.0), 0), ((0.0, 1.0), 1), ((1.0, 0.0), 1), ((1.0, 1.0), 0)]
    samples = []
    for inputs, label in patterns:
        target = np.zeros(2)
        target[label] = 1.0
        samples.append(SequenceSample(inputs=np.array([inputs]), target=target, id=f"xor-{inputs[0]:g}{inputs[1]:g}"))
    return samples


def main(seed: int = 0):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
    samples = create_xor_samples()
    shape = NetworkShape(n=2, hidden_m=4, q=2)

    print("Enumerating minima of the XOR training problem...")
    model, minima = train_qgs(samples, shape, TrainConfig(target_minima=15, seed=seed), XOR_SETTINGS)
    print(f"Found {len(minima)} minima in {minima.attempts_used} attempts")
    for item in minima.items:
        print(f"  #{item.index}: cost {item.cost:.3e}, gradient {item.grad_norm:.1e} ({item.stability})")

    score = accuracy(model.parameters, samples, model.policy)
    print(f"\nSelected minimum cost {model.selected_minimum_cost:.3e}, training accuracy {score:.2f}")
    for sample, output in zip(samples, model.outputs(samples)):
        print(f"  {sample.id}: outputs {np.round(output, 3)}")


if __name__ == "__main__":
    main()
