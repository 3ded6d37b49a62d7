"""Models of the coefficient shift ``Ca - C`` induced by each augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError
from .nn import Linear, Module
from .optim import AdamW


class ApproxNet(Module):
    """V -> hidden -> V perceptron with a ReLU hidden layer."""

    def __init__(self, V: int, hidden: int = 4, rng: np.random.Generator | None = None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.V, self.hidden = V, hidden
        self.fc1 = self.add_child("fc1", Linear(V, hidden, rng))
        self.fc2 = self.add_child("fc2", Linear(hidden, V, rng))

    def forward(self, c):
        return self.fc2(T.relu(self.fc1(c)))

    def predict(self, c: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.forward(np.asarray(c, dtype=np.float64)).data


@dataclass
class ShiftModel:
    """How augmented target coefficients are derived from the plain ones.

    ``variant`` is one of ``same``, ``bias``, ``approx`` or ``ideal``.
    """

    variant: str
    biases: list[np.ndarray] = field(default_factory=list)
    nets: list[ApproxNet] = field(default_factory=list)
    blocks: list[np.ndarray] | None = None
    A: int = 0

    def shifts(self, cy: np.ndarray) -> list[np.ndarray]:
        cy = np.asarray(cy, dtype=np.float64)
        if self.variant == "same":
            return [np.zeros_like(cy) for _ in range(self.A)]
        if self.variant == "bias":
            return [np.broadcast_to(b, cy.shape).copy() for b in self.biases]
        if self.variant == "approx":
            return [net.predict(cy) for net in self.nets]
        if self.variant == "ideal":
            if self.blocks is None:
                raise ContractError("ideal shift model requires the stored augmentation blocks")
            return [np.asarray(b) - cy for b in self.blocks]
        raise ContractError(f"unknown shift variant {self.variant!r}")


def optimal_biases(cy: np.ndarray, blocks) -> list[np.ndarray]:
    return [(np.asarray(b) - cy).mean(axis=0) for b in blocks]


def same_model(A: int) -> ShiftModel:
    return ShiftModel("same", A=A)


def bias_model(cy, blocks) -> ShiftModel:
    return ShiftModel("bias", biases=optimal_biases(cy, blocks), A=len(blocks))


def ideal_model(blocks) -> ShiftModel:
    return ShiftModel("ideal", blocks=[np.asarray(b, dtype=np.float64) for b in blocks], A=len(blocks))


def train_approx(cy: np.ndarray, shifts, hidden: int = 4, steps: int = 2000, lr: float = 1e-3,
                 seed: int = 0, warm_start: bool = True):
    """Fit one ApproxNet per augmentation to ``shifts[a]`` from inputs ``cy``.

    With ``warm_start`` the output layer starts at zero weights and the mean
    shift as bias, so each net begins at the optimal constant predictor; the
    lowest-loss weights seen during training are kept.  Returns
    ``(nets, per_aug_mse)``.
    """
    cy = np.asarray(cy, dtype=np.float64)
    rng = np.random.default_rng(seed)
    V = cy.shape[1]
    nets, errors = [], []
    for target in shifts:
        target = np.asarray(target, dtype=np.float64)
        if target.shape != cy.shape:
            raise ContractError(f"shift block {target.shape} does not match coefficients {cy.shape}")
        net = ApproxNet(V, hidden, rng)
        if warm_start:
            net.fc2.weight.data[:] = 0.0
            net.fc2.bias.data[:] = target.mean(axis=0)
        opt = AdamW(net.parameters(), lr=lr, weight_decay=0.0)
        best = np.inf
        best_state = net.state_dict()
        for _ in range(steps + 1):
            opt.zero_grad()
            diff = net(cy) - target
            loss = (diff * diff).mean()
            value = loss.item()
            if value < best:
                best, best_state = value, net.state_dict()
            loss.backward()
            opt.step()
        net.load_state_dict(best_state)
        nets.append(net)
        errors.append(best)
    return nets, errors


def approx_model(nets) -> ShiftModel:
    return ShiftModel("approx", nets=list(nets), A=len(nets))


def predict_targets(model: ShiftModel, cy, by, mean_y) -> np.ndarray:
    """Targets ``[Y; Y + S_1 By; ...; Y + S_A By]`` with ``Y = Cy By + mean_y``."""
    cy = np.asarray(cy, dtype=np.float64)
    by = np.asarray(by, dtype=np.float64)
    y = cy @ by + mean_y
    return np.concatenate([y] + [y + s @ by for s in model.shifts(cy)], axis=0)


def shift_mse(model: ShiftModel, cy, true_blocks) -> tuple[list[float], float]:
    """Per-augmentation and mean squared error of predicted vs. true coefficient blocks."""
    cy = np.asarray(cy, dtype=np.float64)
    preds = model.shifts(cy)
    per = [float(((cy + p - np.asarray(t)) ** 2).mean()) for p, t in zip(preds, true_blocks)]
    return per, float(np.mean(per)) if per else 0.0
