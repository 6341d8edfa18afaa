"""Finite-difference verification of recorded gradients.

Each component check builds a micro-size instance, reduces its output to a
scalar through a fixed random weighting, records gradients, then compares
against central differences (step 1e-5, 64-bit) at randomly sampled
coordinates.  Relative error is |g - fd| / max(|g|, |fd|, floor), where
floor = 1e-3 * max(1, |loss|) shields coordinates whose gradient sits below
what central differences can resolve (FD noise is ~eps * |loss| / step).
"""

from __future__ import annotations

import numpy as np

from .losses import LossWeights, total_loss
from .network import ModelConfig, TransMamba
from .rng import Rng
from .tensor import Tensor, tsum

COMPONENTS = ("sbsa", "seff", "sdtb", "cbsm", "ssm", "losses", "full")
DEFAULT_TOL = {"losses": 1e-6}


def check_gradients(fn, leaves: list[Tensor], n_coords: int = 20,
                    step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between recorded and finite-difference gradients.

    fn() must rebuild the scalar loss from the current leaf data on every
    call (define-by-run), so perturbing leaf.data and re-running yields the
    finite-difference quotient.
    """
    loss = fn()
    for leaf in leaves:
        leaf.grad = None
    loss.backward()
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
             for leaf in leaves]
    floor = 1e-3 * max(1.0, abs(loss.item()))

    sizes = np.array([leaf.size for leaf in leaves], dtype=np.float64)
    rng = Rng(seed)
    worst = 0.0
    for _ in range(n_coords):
        pick = rng.uniform((), 0.0, sizes.sum())
        which = int(np.searchsorted(np.cumsum(sizes), pick, side="right"))
        which = min(which, len(leaves) - 1)
        leaf = leaves[which]
        flat = leaf.data.reshape(-1)
        j = rng.randint(0, flat.size)
        keep = flat[j]
        flat[j] = keep + step
        up = fn().item()
        flat[j] = keep - step
        down = fn().item()
        flat[j] = keep
        fd = (up - down) / (2.0 * step)
        g = float(grads[which].reshape(-1)[j])
        rel = abs(g - fd) / max(abs(g), abs(fd), floor)
        worst = max(worst, rel)
    return worst


def _component(name: str, seed: int):
    """Return (fn, leaves) for one named micro-component."""
    rng = Rng(seed)
    if name == "losses":
        pred = Tensor(rng.uniform((3, 6, 6), 0.05, 0.95), requires_grad=True)
        target = Tensor(rng.uniform((3, 6, 6), 0.05, 0.95))
        weights = LossWeights(alpha=5.0)
        return (lambda: total_loss(pred, target, weights)), [pred]

    if name == "ssm":
        from .mamba import SelectiveSsm

        ssm = SelectiveSsm(3, 4, rng.spawn(1))
        x = Tensor(rng.normal((3, 12)), requires_grad=True)
        w = Tensor(rng.spawn(2).normal(x.shape))
        fn = lambda: tsum(ssm(x) * w)
        return fn, [x] + list(ssm.parameters())

    if name in ("sbsa", "seff", "sdtb"):
        from .attention import (BandedSpectralAttention, SpectralFeedForward,
                                SpectralTransformerBlock)
        from .spectral import build_mesh_index

        mesh = build_mesh_index(4, 4, 2)
        x = Tensor(rng.normal((2, 4, 4), std=0.5), requires_grad=True)
        if name == "sbsa":
            mod = BandedSpectralAttention(2, 1, 2, rng.spawn(1))
            call = lambda: mod(x, mesh)
        elif name == "seff":
            mod = SpectralFeedForward(2, rng.spawn(1), weight_size=6)
            call = lambda: mod(x)
        else:
            mod = SpectralTransformerBlock(2, 1, 2, rng.spawn(1), weight_size=6)
            call = lambda: mod(x, mesh)
        w = Tensor(rng.spawn(2).normal(x.shape))
        fn = lambda: tsum(call() * w)
        return fn, [x] + list(mod.parameters())

    if name == "cbsm":
        from .mamba import BidirectionalScanModule

        mod = BidirectionalScanModule(2, 2, rng.spawn(1))
        x = Tensor(rng.normal((2, 4, 4), std=0.5), requires_grad=True)
        w = Tensor(rng.spawn(2).normal(x.shape))
        fn = lambda: tsum(mod(x) * w)
        return fn, [x] + list(mod.parameters())

    if name == "full":
        cfg = ModelConfig(base_channels=2, sdtb_counts=(1, 1, 1, 1),
                          cbsm_counts=(1, 1, 1, 1), ssm_state_dim=2,
                          seff_weight_size=6)
        model = TransMamba(cfg, seed=seed + 1)
        rainy = Tensor(rng.uniform((3, 16, 16), 0.1, 0.9), requires_grad=False)
        clean = Tensor(rng.uniform((3, 16, 16), 0.1, 0.9))
        weights = LossWeights(alpha=5.0)
        fn = lambda: total_loss(model(rainy), clean, weights)
        return fn, list(model.parameters())

    raise ValueError(f"unknown gradcheck component {name!r} (expected one of {COMPONENTS})")


def run_component(name: str, n_coords: int = 20, seed: int = 0) -> dict:
    fn, leaves = _component(name, seed)
    tol = DEFAULT_TOL.get(name, 1e-4)
    worst = check_gradients(fn, leaves, n_coords=n_coords, seed=seed + 7)
    return {"component": name, "max_rel_err": worst, "tolerance": tol,
            "coords": n_coords, "passed": worst < tol}


def run_all(names=COMPONENTS, n_coords: int = 20, seed: int = 0) -> list[dict]:
    return [run_component(name, n_coords=n_coords, seed=seed) for name in names]
