"""External-framework oracle for the Gaussian learning-sanity check.

Trains the vanilla GAN preset (same layer sizes, initialization, losses and
optimizer settings as the Rust implementation) with PyTorch on
N((0.3, 0.3), 0.05^2) for 2000 steps at batch 64, for seeds 0..4, and reports
how many seeds put the generated-sample mean within 0.3 of the data mean on
both coordinates. The criterion passes when at least 3 of 5 seeds do.

Usage: python3 tools/gaussian_gan_oracle.py [--steps 2000] [--seeds 5]
"""

import argparse
import time

import torch
from torch import nn

MEAN = (0.3, 0.3)
STD = 0.05
LATENT = 100


def glorot_linear(i, o):
    layer = nn.Linear(i, o)
    nn.init.normal_(layer.weight, 0.0, (2.0 / (i + o)) ** 0.5)
    nn.init.zeros_(layer.bias)
    return layer


def generator(dim):
    layers, width = [], LATENT
    for units in (256, 512, 1024):
        layers += [glorot_linear(width, units), nn.LeakyReLU(0.2)]
        width = units
    layers += [glorot_linear(width, dim), nn.Tanh()]
    return nn.Sequential(*layers)


def discriminator(dim):
    layers, width = [], dim
    for units in (512, 256):
        layers += [glorot_linear(width, units), nn.LeakyReLU(0.2)]
        width = units
    layers += [glorot_linear(width, 1), nn.Sigmoid()]
    return nn.Sequential(*layers)


def run(seed, steps, batch):
    torch.manual_seed(seed)
    data = (torch.tensor(MEAN, dtype=torch.float64) + STD * torch.randn(5000, 2, dtype=torch.float64)).clamp(-1, 1)
    g, d = generator(2).double(), discriminator(2).double()
    opt_g = torch.optim.Adam(g.parameters(), lr=2e-4, betas=(0.5, 0.999), eps=1e-8)
    opt_d = torch.optim.Adam(d.parameters(), lr=2e-4, betas=(0.5, 0.999), eps=1e-8)
    bce = nn.BCELoss()
    done = 0
    while done < steps:
        for idx in torch.randperm(len(data)).split(batch):
            if done == steps:
                break
            real = data[idx]
            n = len(real)
            ones = torch.ones(n, 1, dtype=torch.float64)
            zeros = torch.zeros(n, 1, dtype=torch.float64)
            fake = g(torch.randn(n, LATENT, dtype=torch.float64))
            d_loss = 0.5 * (bce(d(real), ones) + bce(d(fake.detach()), zeros))
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            g_loss = bce(d(fake), ones)
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            done += 1
    with torch.no_grad():
        return g(torch.randn(1000, LATENT, dtype=torch.float64)).mean(0).tolist()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    args = ap.parse_args()
    torch.set_num_threads(1)
    hits = 0
    for seed in range(args.seeds):
        start = time.time()
        m = run(seed, args.steps, args.batch)
        ok = all(abs(a - b) <= 0.3 for a, b in zip(m, MEAN))
        hits += ok
        print(f"seed {seed}: mean ({m[0]:.3f}, {m[1]:.3f}) {'within' if ok else 'outside'} 0.3 [{time.time() - start:.1f}s]")
    verdict = "PASS" if hits >= 3 else "FAIL"
    print(f"{verdict}: {hits}/{args.seeds} seeds within 0.3")


if __name__ == "__main__":
    main()
