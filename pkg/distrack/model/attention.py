"""
Single-head self-attention over a spatial feature map, with hand-written
backward pass.

A (S_y, S_x, d_in) feature map is read as N = S_y * S_x vectors h_i in
row-major order. With a learned per-index embedding E:

    Q = (H + E) W_q^T + b_q,   K = ... W_k,   V = ... W_v
    A = softmax_rows(Q K^T / sqrt(d_k))     (row i = weights of query i)
    out = (A V) W_o^T + b_o

All computations run in float64.
"""

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import torch
from torch import Tensor

from distrack.data.tensor_io import read_tensor, write_tensor
from distrack.errors import CorruptFile, NonFiniteInput, ShapeMismatch
from distrack.utils import atomic_write_text, dump_json

DTYPE = torch.float64


@dataclass
class AttentionParams:
    w_q: Tensor  # (d_k, d_in)
    b_q: Tensor  # (d_k,)
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor  # (d_out, d_k)
    b_o: Tensor  # (d_out,)
    embedding: Tensor  # (N, d_in)

    @property
    def d_in(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_k(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_out(self) -> int:
        return self.w_o.shape[0]

    @property
    def num_positions(self) -> int:
        return self.embedding.shape[0]

    @classmethod
    def random(
        cls,
        num_positions: int,
        d_in: int,
        d_k: int,
        d_out: int,
        seed: int = 0,
        scale: float = 0.5,
        embedding_scale: float = 0.1,
    ) -> "AttentionParams":
        generator = torch.Generator().manual_seed(seed)

        def uniform(*shape, s=scale):
            return (torch.rand(*shape, generator=generator, dtype=DTYPE) * 2 - 1) * s

        return cls(
            w_q=uniform(d_k, d_in),
            b_q=uniform(d_k),
            w_k=uniform(d_k, d_in),
            b_k=uniform(d_k),
            w_v=uniform(d_k, d_in),
            b_v=uniform(d_k),
            w_o=uniform(d_out, d_k),
            b_o=uniform(d_out),
            embedding=uniform(num_positions, d_in, s=embedding_scale),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self):
        if self.d_k < 1 or self.num_positions < 1:
            raise ShapeMismatch("attention needs d_k >= 1 and at least one position")
        expected = {
            "w_q": (self.d_k, self.d_in),
            "b_q": (self.d_k,),
            "w_k": (self.d_k, self.d_in),
            "b_k": (self.d_k,),
            "w_v": (self.d_k, self.d_in),
            "b_v": (self.d_k,),
            "w_o": (self.d_out, self.d_k),
            "b_o": (self.d_out,),
            "embedding": (self.num_positions, self.d_in),
        }
        for name, tensor in self.tensors().items():
            if tuple(tensor.shape) != expected[name]:
                raise ShapeMismatch(
                    f"{name} has shape {tuple(tensor.shape)}, expected {expected[name]}"
                )
            if not torch.isfinite(tensor).all():
                raise NonFiniteInput(f"{name} has non-finite entries")


@dataclass
class AttentionGradients:
    features: Tensor
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    embedding: Tensor


@dataclass
class AttentionCache:
    inputs: Tensor  # features (+ embedding)
    q: Tensor
    k: Tensor
    v: Tensor
    context: Tensor


@dataclass
class AttentionOutput:
    output: Tensor  # (N, d_out)
    weights: Tensor  # (N, N), rows = queries
    cache: AttentionCache


def as_feature_set(features) -> Tensor:
    """(S_y, S_x, d) maps are flattened row-major to (S_y * S_x, d)."""
    features = torch.as_tensor(features, dtype=DTYPE)
    if features.ndim == 3:
        features = features.reshape(-1, features.shape[-1])
    if features.ndim != 2:
        raise ShapeMismatch(
            f"features must be (N, d) or (S_y, S_x, d), got {tuple(features.shape)}"
        )
    return features


def check_finite(name: str, tensor: Tensor):
    if not torch.isfinite(tensor).all():
        raise NonFiniteInput(f"{name} contains NaN or infinite values")


def add_positional(features: Tensor, embedding: Tensor) -> Tensor:
    if features.shape != embedding.shape:
        raise ShapeMismatch(
            f"features {tuple(features.shape)} and embedding {tuple(embedding.shape)} differ"
        )
    return features + embedding


def stable_softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(dim=1, keepdim=True).values
    exp = torch.exp(shifted)
    return exp / exp.sum(dim=1, keepdim=True)


def self_attention_forward(
    features, params: AttentionParams, positional: bool = True
) -> AttentionOutput:
    features = as_feature_set(features)
    check_finite("features", features)
    params.validate()
    if features.shape[1] != params.d_in:
        raise ShapeMismatch(f"features have dim {features.shape[1]}, params expect {params.d_in}")

    inputs = features
    if positional:
        inputs = add_positional(features, params.embedding)

    q = inputs @ params.w_q.T + params.b_q
    k = inputs @ params.w_k.T + params.b_k
    v = inputs @ params.w_v.T + params.b_v

    weights = stable_softmax(q @ k.T / math.sqrt(params.d_k))
    context = weights @ v
    output = context @ params.w_o.T + params.b_o

    return AttentionOutput(
        output=output,
        weights=weights,
        cache=AttentionCache(inputs=inputs, q=q, k=k, v=v, context=context),
    )


def self_attention_backward(
    features,
    params: AttentionParams,
    grad_output: Tensor,
    positional: bool = True,
    forward: AttentionOutput | None = None,
) -> AttentionGradients:
    if forward is None:
        forward = self_attention_forward(features, params, positional)
    grad_output = torch.as_tensor(grad_output, dtype=DTYPE)
    if grad_output.shape != forward.output.shape:
        raise ShapeMismatch(
            f"upstream gradient {tuple(grad_output.shape)} does not match output "
            f"{tuple(forward.output.shape)}"
        )
    check_finite("upstream gradient", grad_output)

    cache = forward.cache
    weights = forward.weights
    scale = 1.0 / math.sqrt(params.d_k)

    grad_w_o = grad_output.T @ cache.context
    grad_b_o = grad_output.sum(dim=0)
    grad_context = grad_output @ params.w_o

    grad_weights = grad_context @ cache.v.T
    grad_v = weights.T @ grad_context

    # softmax jacobian, row by row
    grad_logits = weights * (grad_weights - (grad_weights * weights).sum(dim=1, keepdim=True))
    grad_q = grad_logits @ cache.k * scale
    grad_k = grad_logits.T @ cache.q * scale

    grad_inputs = grad_q @ params.w_q + grad_k @ params.w_k + grad_v @ params.w_v

    return AttentionGradients(
        features=grad_inputs,
        w_q=grad_q.T @ cache.inputs,
        b_q=grad_q.sum(dim=0),
        w_k=grad_k.T @ cache.inputs,
        b_k=grad_k.sum(dim=0),
        w_v=grad_v.T @ cache.inputs,
        b_v=grad_v.sum(dim=0),
        w_o=grad_w_o,
        b_o=grad_b_o,
        embedding=grad_inputs.clone() if positional else torch.zeros_like(params.embedding),
    )


@dataclass
class BlockParams:
    """Attention layer followed by a shared affine map of [h_i ; h_i^out]."""

    attention: AttentionParams
    w_mix: Tensor  # (d_mix, d_in + d_out)
    b_mix: Tensor  # (d_mix,)

    @classmethod
    def random(
        cls, num_positions: int, d_in: int, d_k: int, d_out: int, d_mix: int, seed: int = 0
    ) -> "BlockParams":
        attention = AttentionParams.random(num_positions, d_in, d_k, d_out, seed=seed)
        generator = torch.Generator().manual_seed(seed + 1)
        w_mix = (torch.rand(d_mix, d_in + d_out, generator=generator, dtype=DTYPE) * 2 - 1) * 0.5
        b_mix = (torch.rand(d_mix, generator=generator, dtype=DTYPE) * 2 - 1) * 0.5
        return cls(attention=attention, w_mix=w_mix, b_mix=b_mix)


@dataclass
class BlockGradients:
    attention: AttentionGradients
    w_mix: Tensor
    b_mix: Tensor

    @property
    def features(self) -> Tensor:
        return self.attention.features


def attention_block_forward(features, params: BlockParams) -> tuple[Tensor, AttentionOutput]:
    features = as_feature_set(features)
    attended = self_attention_forward(features, params.attention, positional=True)
    joined = torch.cat([features, attended.output], dim=1)
    if joined.shape[1] != params.w_mix.shape[1]:
        raise ShapeMismatch(
            f"mixing weights expect {params.w_mix.shape[1]} inputs, got {joined.shape[1]}"
        )
    return joined @ params.w_mix.T + params.b_mix, attended


def attention_block_backward(features, params: BlockParams, grad_output: Tensor) -> BlockGradients:
    features = as_feature_set(features)
    _, attended = attention_block_forward(features, params)
    grad_output = torch.as_tensor(grad_output, dtype=DTYPE)

    joined = torch.cat([features, attended.output], dim=1)
    grad_joined = grad_output @ params.w_mix
    d_in = features.shape[1]

    attention_grads = self_attention_backward(
        features,
        params.attention,
        grad_joined[:, d_in:],
        positional=True,
        forward=attended,
    )
    attention_grads.features = attention_grads.features + grad_joined[:, :d_in]

    return BlockGradients(
        attention=attention_grads,
        w_mix=grad_output.T @ joined,
        b_mix=grad_output.sum(dim=0),
    )


def attention_matrix_sum_x(weights, size_y: int, size_x: int) -> Tensor:
    """
    Collapse an (N, N) attention matrix over a (size_y, size_x) map into a
    (size_y, size_y) matrix by summing over the X coordinate of both query
    and key, then normalize rows to sum to 1.
    """
    weights = torch.as_tensor(weights, dtype=DTYPE)
    n = size_y * size_x
    if weights.shape != (n, n):
        raise ShapeMismatch(
            f"attention matrix {tuple(weights.shape)} does not match a {size_y}x{size_x} map"
        )
    summed = weights.reshape(size_y, size_x, size_y, size_x).sum(dim=(1, 3))
    totals = summed.sum(dim=1, keepdim=True)
    return torch.where(totals > 0, summed / totals.clamp_min(1e-300), summed)


PARAM_ROLES = {
    "w_q": "query projection",
    "b_q": "query bias",
    "w_k": "key projection",
    "b_k": "key bias",
    "w_v": "value projection",
    "b_v": "value bias",
    "w_o": "output projection",
    "b_o": "output bias",
    "embedding": "positional embedding",
}


def save_params(directory: Path | str, params: AttentionParams):
    """One float32 tensor file per parameter (vectors stored as 1 x d) plus a manifest."""
    directory = Path(directory)
    manifest = {"format": "MMT1", "tensors": {}}
    for name, tensor in params.tensors().items():
        array = tensor.detach().cpu().numpy()
        if array.ndim == 1:
            array = array[None, :]
        write_tensor(directory / f"{name}.mmt", array, dtype="<f4")
        manifest["tensors"][name] = {
            "file": f"{name}.mmt",
            "role": PARAM_ROLES[name],
            "shape": list(tensor.shape),
        }
    atomic_write_text(directory / "params.json", dump_json(manifest))


def load_params(directory: Path | str) -> AttentionParams:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "params.json").read_text())
        entries = manifest["tensors"]
        tensors = {}
        for name in PARAM_ROLES:
            entry = entries[name]
            array = read_tensor(directory / entry["file"])
            tensors[name] = torch.as_tensor(array, dtype=DTYPE).reshape(entry["shape"])
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise CorruptFile(f"malformed parameter manifest in {directory}: {e!r}") from e

    params = AttentionParams(**tensors)
    params.validate()
    return params
