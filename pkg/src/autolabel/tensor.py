"""Minimal reverse-mode autodiff on dense numpy arrays.

A Tensor wraps an ndarray and records, per op, a backward closure plus its
parent nodes. backward() topologically sorts the graph and accumulates
gradients into every leaf that requires them. Only the ops the classifiers
and attacks need are implemented: matmul, broadcast add/sub/mul, relu,
conv2d (3x3, stride 1, same padding), 2x2 max pooling, reshape, exp, log,
clip_min, sum/mean reductions and a stop-gradient max shift for stable
softmax.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Node in the autodiff graph. `data` is any float ndarray; the dtype of
    the inputs is preserved throughout (float32 for training, float64 where
    tests need finite-difference headroom)."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._parents: tuple = ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy() if grad.base is not None else grad
        else:
            self.grad = self.grad + grad

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every requiring leaf."""
        if seed is None:
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:  # iterative DFS; graphs can exceed recursion depth
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        grads = {id(self): np.asarray(seed, dtype=self.data.dtype)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pgrad in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pgrad
                    else:
                        grads[id(parent)] = pgrad
            else:
                node._accumulate(g)

    # ---- construction helper ----
    @staticmethod
    def _op(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # ---- arithmetic ----
    def __add__(self, other: "Tensor") -> "Tensor":
        def back(g):
            return ((self, _unbroadcast(g, self.data.shape)),
                    (other, _unbroadcast(g, other.data.shape)))
        return Tensor._op(self.data + other.data, (self, other), back)

    def __sub__(self, other: "Tensor") -> "Tensor":
        def back(g):
            return ((self, _unbroadcast(g, self.data.shape)),
                    (other, _unbroadcast(-g, other.data.shape)))
        return Tensor._op(self.data - other.data, (self, other), back)

    def __mul__(self, other: "Tensor") -> "Tensor":
        def back(g):
            return ((self, _unbroadcast(g * other.data, self.data.shape)),
                    (other, _unbroadcast(g * self.data, other.data.shape)))
        return Tensor._op(self.data * other.data, (self, other), back)

    def __neg__(self) -> "Tensor":
        return Tensor._op(-self.data, (self,), lambda g: ((self, -g),))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        def back(g):
            return ((self, g @ other.data.T), (other, self.data.T @ g))
        return Tensor._op(self.data @ other.data, (self, other), back)

    def scale(self, k: float) -> "Tensor":
        return Tensor._op(self.data * k, (self,), lambda g: ((self, g * k),))

    # ---- nonlinearities / elementwise ----
    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor._op(self.data * mask, (self,), lambda g: ((self, g * mask),))

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)
        return Tensor._op(out_data, (self,), lambda g: ((self, g * out_data),))

    def log(self) -> "Tensor":
        return Tensor._op(np.log(self.data), (self,), lambda g: ((self, g / self.data),))

    def clip_min(self, floor: float) -> "Tensor":
        # subgradient 1 where data >= floor, 0 below
        mask = self.data >= floor
        return Tensor._op(np.maximum(self.data, floor), (self,),
                          lambda g: ((self, g * mask),))

    def shift_max(self, axis: int) -> "Tensor":
        """Subtract the max along `axis`, treating the max as a constant.

        Valid as a softmax pre-step because softmax is shift invariant; the
        resulting gradient is the true softmax gradient."""
        m = self.data.max(axis=axis, keepdims=True)
        return Tensor._op(self.data - m, (self,), lambda g: ((self, g),))

    # ---- reductions / reshaping ----
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        def back(g):
            if axis is None:
                return ((self, np.broadcast_to(g, self.data.shape)),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return ((self, np.broadcast_to(gg, self.data.shape)),)
        return Tensor._op(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self) -> "Tensor":
        n = self.data.size
        return Tensor._op(self.data.mean(), (self,),
                          lambda g: ((self, np.broadcast_to(g / n, self.data.shape)),))

    def reshape(self, *shape) -> "Tensor":
        old = self.data.shape
        return Tensor._op(self.data.reshape(*shape), (self,),
                          lambda g: ((self, g.reshape(old)),))

    def div(self, other: "Tensor") -> "Tensor":
        def back(g):
            return ((self, _unbroadcast(g / other.data, self.data.shape)),
                    (other, _unbroadcast(-g * self.data / (other.data ** 2),
                                         other.data.shape)))
        return Tensor._op(self.data / other.data, (self, other), back)

    # ---- image ops ----
    def conv2d(self, weight: "Tensor", bias: "Tensor") -> "Tensor":
        """3x3 (or kxk) stride-1 'same' convolution over NCHW input.

        weight: (Cout, Cin, k, k), bias: (Cout,). Implemented with k*k
        shifted-slice accumulation, which keeps both passes as plain
        matmuls/adds."""
        x = self.data
        w = weight.data
        B, C, H, W = x.shape
        Cout, Cin, k, _ = w.shape
        if Cin != C:
            raise ValueError(f"conv2d channel mismatch: input {C}, weight {Cin}")
        pad = k // 2
        xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + H, pad:pad + W] = x
        cols = np.empty((B, H, W, C * k * k), dtype=x.dtype)
        idx = 0
        for di in range(k):
            for dj in range(k):
                patch = xp[:, :, di:di + H, dj:dj + W]  # (B,C,H,W)
                cols[:, :, :, idx * C:(idx + 1) * C] = patch.transpose(0, 2, 3, 1)
                idx += 1
        wmat = w.transpose(2, 3, 1, 0).reshape(k * k * C, Cout)  # matches cols layout
        out = cols.reshape(B * H * W, -1) @ wmat
        out = out.reshape(B, H, W, Cout).transpose(0, 3, 1, 2) + bias.data[None, :, None, None]

        def back(g):
            gmat = g.transpose(0, 2, 3, 1).reshape(B * H * W, Cout)
            gw_mat = cols.reshape(B * H * W, -1).T @ gmat           # (k*k*C, Cout)
            gw = gw_mat.reshape(k, k, C, Cout).transpose(3, 2, 0, 1)
            gb = g.sum(axis=(0, 2, 3))
            gcols = (gmat @ wmat.T).reshape(B, H, W, k * k, C)
            gxp = np.zeros_like(xp)
            idx2 = 0
            for di in range(k):
                for dj in range(k):
                    gxp[:, :, di:di + H, dj:dj + W] += gcols[:, :, :, idx2, :].transpose(0, 3, 1, 2)
                    idx2 += 1
            gx = gxp[:, :, pad:pad + H, pad:pad + W]
            return ((self, gx), (weight, gw), (bias, gb))

        return Tensor._op(out, (self, weight, bias), back)

    def maxpool2(self) -> "Tensor":
        """2x2 max pooling, stride 2; H and W must be even. Ties break to the
        first position so the backward pass is deterministic."""
        x = self.data
        B, C, H, W = x.shape
        if H % 2 or W % 2:
            raise ValueError("maxpool2 needs even spatial dims")
        xr = x.reshape(B, C, H // 2, 2, W // 2, 2)
        flat = xr.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
        arg = flat.argmax(axis=4)
        out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]

        def back(g):
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, arg[..., None], g[..., None], axis=4)
            gx = gflat.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            return ((self, gx.reshape(B, C, H, W)),)

        return Tensor._op(out, (self,), back)


def softmax_graph(logits: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis, differentiable."""
    shifted = logits.shift_max(axis=-1)
    e = shifted.exp()
    return e.div(e.sum(axis=-1, keepdims=True))


def soft_cross_entropy_graph(logits: Tensor, targets: Tensor,
                             floor: float = 1e-12) -> Tensor:
    """Mean over the batch of -sum_k target_k * log(max(p_k, floor))."""
    p = softmax_graph(logits)
    logp = p.clip_min(floor).log()
    per_sample = (targets * logp).sum(axis=-1)
    return -per_sample.mean()
