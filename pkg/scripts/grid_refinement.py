"""Held-out error of a KAN as the spline grid is refined (G = 3, 5, 10, 20, 40)."""
import numpy as np

from kan_koopman.kan import TrainConfig, forward, init_network, train


def main():
    rng = np.random.default_rng(0)

    def target(x):
        return np.sin(np.pi * x[:, 0]) + 0.5 * np.cos(2 * np.pi * x[:, 1])

    xtr = rng.uniform(-1, 1, (1000, 2))
    xte = rng.uniform(-1, 1, (1000, 2))
    print("G test_mse")
    for g in (3, 5, 10, 20, 40):
        net, _ = train(init_network((2, 1), grid=g, kappa=3), xtr, target(xtr),
                       TrainConfig(learning_rate=1.0, epochs=3000))
        print(g, f"{np.mean((forward(net, xte) - target(xte)) ** 2):.3e}")


if __name__ == "__main__":
    main()
