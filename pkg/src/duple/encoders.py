"""Time-domain (1-D conv) and spectrogram (2-D conv) embedding networks."""
from __future__ import annotations

import numpy as np

from .diffcore import ParamStore, Tensor, conv1d, conv2d, linear, relu

EMBED_DIM = 128
TIME_CHANNELS = (16, 32, 64, 128)
TIME_KERNEL = 7
FREQ_CHANNELS = (8, 16, 32)
FREQ_KERNEL = 3
STRIDE = 2


def _standardize(x: np.ndarray, axes) -> np.ndarray:
    # fixed per-input scaling, not a learned normalization layer
    mu = x.mean(axis=axes, keepdims=True)
    sd = x.std(axis=axes, keepdims=True)
    return (x - mu) / np.where(sd > 0, sd, 1.0)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


class TimeEncoder:
    """4 x (conv1d k=7 s=2, relu) -> global mean pool -> linear 128->128."""

    def __init__(self, store: ParamStore, length: int, prefix: str = "time"):
        self.store, self.length, self.prefix = store, length, prefix
        cin = 1
        for i, cout in enumerate(TIME_CHANNELS):
            name = f"{prefix}.conv{i}"
            if f"{name}.w" not in store:
                store.glorot(f"{name}.w", (cout, cin, TIME_KERNEL), cin * TIME_KERNEL, cout * TIME_KERNEL)
                store.zeros(f"{name}.b", (cout,))
            cin = cout
        if f"{prefix}.out.w" not in store:
            store.glorot(f"{prefix}.out.w", (EMBED_DIM, cin), cin, EMBED_DIM)
            store.zeros(f"{prefix}.out.b", (EMBED_DIM,))

    def __call__(self, x) -> Tensor:
        """x: (B, L) raw waveforms -> (B, 128)."""
        x = _data(x)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.length:
            raise ValueError(f"time encoder expects length {self.length}, got {x.shape[-1]}")
        h = Tensor(_standardize(x, axes=1)[:, None, :])
        s, p = self.store, self.prefix
        for i in range(len(TIME_CHANNELS)):
            h = relu(conv1d(h, s[f"{p}.conv{i}.w"], s[f"{p}.conv{i}.b"], STRIDE, TIME_KERNEL // 2))
        return linear(h.mean(axis=2), s[f"{p}.out.w"], s[f"{p}.out.b"])


class FreqEncoder:
    """3 x (conv2d 3x3 s=2, relu) -> global mean pool -> linear 32->128."""

    def __init__(self, store: ParamStore, shape: tuple[int, int], prefix: str = "freq"):
        self.store, self.shape, self.prefix = store, tuple(shape), prefix
        cin = 1
        for i, cout in enumerate(FREQ_CHANNELS):
            name = f"{prefix}.conv{i}"
            if f"{name}.w" not in store:
                fan = FREQ_KERNEL * FREQ_KERNEL
                store.glorot(f"{name}.w", (cout, cin, FREQ_KERNEL, FREQ_KERNEL), cin * fan, cout * fan)
                store.zeros(f"{name}.b", (cout,))
            cin = cout
        if f"{prefix}.out.w" not in store:
            store.glorot(f"{prefix}.out.w", (EMBED_DIM, cin), cin, EMBED_DIM)
            store.zeros(f"{prefix}.out.b", (EMBED_DIM,))

    def __call__(self, spec) -> Tensor:
        """spec: (B, frames, bins) log-magnitudes -> (B, 128)."""
        x = _data(getattr(spec, "values", spec))
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != self.shape:
            raise ValueError(f"frequency encoder expects {self.shape} spectrograms, got {x.shape[1:]}")
        h = Tensor(_standardize(x, axes=(1, 2))[:, None])
        s, p = self.store, self.prefix
        for i in range(len(FREQ_CHANNELS)):
            h = relu(conv2d(h, s[f"{p}.conv{i}.w"], s[f"{p}.conv{i}.b"], STRIDE, FREQ_KERNEL // 2))
        return linear(h.mean(axis=(2, 3)), s[f"{p}.out.w"], s[f"{p}.out.b"])


def encode_time(encoder: TimeEncoder, samples) -> np.ndarray:
    return encoder(np.asarray(samples)[None]).data[0]


def encode_freq(encoder: FreqEncoder, spec) -> np.ndarray:
    x = _data(getattr(spec, "values", spec))
    return encoder(x[None]).data[0]
