"""The pair classifier.

A small convolutional network reads a 20x40 concatenated face pair and
emits a two-way distribution: index 0 means the halves show different
people, index 1 means the same person. The index-1 probability is the
verification score. Training minimizes cross-entropy against the
one-hot target, which equals the KL divergence to it because the
target's own entropy is zero.

The layer stack is fixed in form: convolution layers (true convolution,
kernels flipped) with ReLU and optional 2x2 max pooling, then fully
connected layers ending in 2 logits and a softmax. Gradients come from
reverse-mode accumulation through that stack, written out by hand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from coffar import kernels
from coffar.errors import CheckpointError, ConfigError, ShapeError, ValueCheckError
from coffar.numeric import PROB_CLAMP_HI, PROB_CLAMP_LO, cross_entropy
from coffar.pairs import PairLabel

PAIR_HEIGHT = 20
PAIR_WIDTH = 40

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TargetDistribution:
    """Ideal output distribution for a labelled pair."""

    label: PairLabel

    @property
    def probs(self) -> np.ndarray:
        if self.label is PairLabel.SAME:
            return np.array([0.0, 1.0])
        return np.array([1.0, 0.0])

    @property
    def class_index(self) -> int:
        return 1 if self.label is PairLabel.SAME else 0


def target_for(label: PairLabel) -> TargetDistribution:
    return TargetDistribution(label=label)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    conv_specs lists (out_channels, kernel_h, kernel_w) per convolution
    layer; pool_after_conv says which of them are followed by a 2x2 max
    pool; fc_dims lists the hidden fully connected widths, with the
    final 2-logit layer implied.
    """

    conv_specs: tuple[tuple[int, int, int], ...] = ((8, 3, 3), (16, 3, 3))
    pool_after_conv: tuple[bool, ...] = (True, True)
    fc_dims: tuple[int, ...] = (64,)
    activation: str = "relu"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "conv_specs": [list(s) for s in self.conv_specs],
            "pool_after_conv": list(self.pool_after_conv),
            "fc_dims": list(self.fc_dims),
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {"conv_specs", "pool_after_conv", "fc_dims", "activation", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        merged = cls().to_dict()
        merged.update(data)
        try:
            return cls(
                conv_specs=tuple(tuple(int(v) for v in s)
                                 for s in merged["conv_specs"]),
                pool_after_conv=tuple(bool(b) for b in merged["pool_after_conv"]),
                fc_dims=tuple(int(v) for v in merged["fc_dims"]),
                activation=str(merged["activation"]),
                seed=int(merged["seed"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed model config: {exc}")


def default_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(seed=seed)


def _propagate_shapes(config: ModelConfig) -> tuple[list[tuple[int, int, int]], int]:
    """Validate the architecture and return each conv stage's output
    (channels, h, w) plus the flattened width feeding the fc path."""
    if not config.conv_specs:
        raise ConfigError("at least one convolution layer is required")
    if len(config.pool_after_conv) != len(config.conv_specs):
        raise ConfigError(
            f"pool_after_conv has {len(config.pool_after_conv)} entries "
            f"for {len(config.conv_specs)} convolution layers"
        )
    if config.activation != "relu":
        raise ConfigError(f"unsupported activation {config.activation!r}")
    ch, h, w = 1, PAIR_HEIGHT, PAIR_WIDTH
    stages = []
    for li, (co, kh, kw) in enumerate(config.conv_specs):
        if co < 1:
            raise ConfigError(f"conv layer {li}: need at least one channel")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"conv layer {li}: kernel {kh}x{kw} must be odd")
        if kh > h or kw > w:
            raise ConfigError(
                f"conv layer {li}: kernel {kh}x{kw} exceeds map size {h}x{w}"
            )
        ch = co
        if config.pool_after_conv[li]:
            if h % 2 or w % 2:
                raise ConfigError(
                    f"conv layer {li}: cannot 2x2-pool odd map size {h}x{w}"
                )
            h, w = h // 2, w // 2
        stages.append((ch, h, w))
    for width in config.fc_dims:
        if width < 1:
            raise ConfigError("fc widths must be positive")
    return stages, ch * h * w


class Model:
    """Parameter container. Forward and loss treat it as read-only;
    the trainer mutates parameters in place between steps."""

    def __init__(self, config: ModelConfig, conv_kernels, conv_biases,
                 fc_weights, fc_biases):
        self.config = config
        self.conv_kernels = conv_kernels
        self.conv_biases = conv_biases
        self.fc_weights = fc_weights
        self.fc_biases = fc_biases

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        params = []
        for li, (k, b) in enumerate(zip(self.conv_kernels, self.conv_biases)):
            params.append((f"conv{li}.kernel", k))
            params.append((f"conv{li}.bias", b))
        for li, (w, b) in enumerate(zip(self.fc_weights, self.fc_biases)):
            params.append((f"fc{li}.weight", w))
            params.append((f"fc{li}.bias", b))
        return params

    @property
    def feature_width(self) -> int:
        """Width of the penultimate representation (final fc input)."""
        return self.fc_weights[-1].shape[1]


def init_model(config: ModelConfig) -> Model:
    """Build a model with zero-mean uniform weights and zero biases.

    The uniform half-width is sqrt(6 / (fan_in + fan_out)). Draws are
    made in layer order from a PCG64 generator seeded with config.seed,
    so equal seeds give bit-identical parameters.
    """
    _, flat = _propagate_shapes(config)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    conv_kernels, conv_biases = [], []
    ci = 1
    for co, kh, kw in config.conv_specs:
        fan_in = ci * kh * kw
        fan_out = co * kh * kw
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        conv_kernels.append(rng.uniform(-lim, lim, size=(co, ci, kh, kw)))
        conv_biases.append(np.zeros(co))
        ci = co
    fc_weights, fc_biases = [], []
    in_dim = flat
    for out_dim in tuple(config.fc_dims) + (2,):
        lim = np.sqrt(6.0 / (in_dim + out_dim))
        fc_weights.append(rng.uniform(-lim, lim, size=(out_dim, in_dim)))
        fc_biases.append(np.zeros(out_dim))
        in_dim = out_dim
    return Model(config, conv_kernels, conv_biases, fc_weights, fc_biases)


def _maxpool_fwd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, c, h, w = a.shape
    blocks = (
        a.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    # argmax takes the first maximum, so ties route to the earliest
    # position in row-major block order, deterministically.
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_bwd(g: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c, oh, ow = g.shape
    blocks = np.zeros((n, c, oh, ow, 4))
    np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
    return (
        blocks.reshape(n, c, oh, ow, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _forward_batch(model: Model, x: np.ndarray, keep_caches: bool):
    """x: (n, 1, 20, 40). Returns (probs, caches); caches is None unless
    requested."""
    conv_caches = []
    h = x
    for li, (k, b) in enumerate(zip(model.conv_kernels, model.conv_biases)):
        flipped = np.ascontiguousarray(k[:, :, ::-1, ::-1])
        pre = kernels.corr2d_fwd(h, flipped) + b[None, :, None, None]
        act = np.maximum(pre, 0.0)
        if model.config.pool_after_conv[li]:
            pooled, switch = _maxpool_fwd(act)
        else:
            pooled, switch = act, None
        if keep_caches:
            conv_caches.append((h, pre, act, switch))
        h = pooled
    conv_out_shape = h.shape
    flat = h.reshape(h.shape[0], -1)
    fc_caches = []
    a = flat
    for w, b in zip(model.fc_weights[:-1], model.fc_biases[:-1]):
        z = a @ w.T + b
        if keep_caches:
            fc_caches.append((a, z))
        a = np.maximum(z, 0.0)
    features = a
    logits = a @ model.fc_weights[-1].T + model.fc_biases[-1]
    probs = _softmax_rows(logits)
    if not keep_caches:
        return probs, None
    caches = {
        "conv": conv_caches,
        "conv_out_shape": conv_out_shape,
        "fc": fc_caches,
        "features": features,
        "probs": probs,
    }
    return probs, caches


def _check_pair_image(pair: np.ndarray) -> np.ndarray:
    img = np.asarray(pair, dtype=np.float64)
    if img.shape != (PAIR_HEIGHT, PAIR_WIDTH):
        raise ShapeError(
            f"pair image must be {PAIR_HEIGHT}x{PAIR_WIDTH}, got shape {img.shape}"
        )
    return img


def forward(model: Model, pair: np.ndarray) -> np.ndarray:
    """Class distribution for one pair: [different, same]."""
    img = _check_pair_image(pair)
    probs, _ = _forward_batch(model, img[None, None], keep_caches=False)
    return probs[0]


def forward_batch(model: Model, pair_images: np.ndarray) -> np.ndarray:
    """Class distributions for a stack of pairs, shape (n, 20, 40)."""
    x = np.asarray(pair_images, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (PAIR_HEIGHT, PAIR_WIDTH) or x.shape[0] == 0:
        raise ShapeError(
            f"expected (n, {PAIR_HEIGHT}, {PAIR_WIDTH}) stack, got shape {x.shape}"
        )
    probs, _ = _forward_batch(model, x[:, None], keep_caches=False)
    return probs


def verification_score(model: Model, pair: np.ndarray) -> float:
    """Probability that the two halves show the same person."""
    return float(forward(model, pair)[1])


@dataclass(frozen=True)
class ForwardTrace:
    """Intermediate activations kept for inspection tooling."""

    probs: np.ndarray
    conv_activations: list[np.ndarray]
    features: np.ndarray


def forward_trace(model: Model, pair: np.ndarray) -> ForwardTrace:
    img = _check_pair_image(pair)
    probs, caches = _forward_batch(model, img[None, None], keep_caches=True)
    acts = [cache[2][0] for cache in caches["conv"]]
    return ForwardTrace(
        probs=probs[0], conv_activations=acts, features=caches["features"][0]
    )


def loss(model: Model, pair: np.ndarray, target: TargetDistribution) -> float:
    """Cross-entropy of the prediction against the one-hot target."""
    return cross_entropy(target.probs, forward(model, pair))


def _xent_value(probs: np.ndarray, targets: np.ndarray) -> float:
    clamped = np.clip(probs, PROB_CLAMP_LO, PROB_CLAMP_HI)
    per_sample = -(targets * np.log(clamped)).sum(axis=1)
    return float(per_sample.mean())


def _xent_backward(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """d(mean clamped cross-entropy)/d(logits), exact including the
    clamp: where a probability sits outside the clamp window its log
    term is constant, so its direct contribution vanishes."""
    n = probs.shape[0]
    clamped = np.clip(probs, PROB_CLAMP_LO, PROB_CLAMP_HI)
    dlp = -(targets / clamped) / n
    dlp *= (probs > PROB_CLAMP_LO) & (probs < PROB_CLAMP_HI)
    inner = (dlp * probs).sum(axis=1, keepdims=True)
    return probs * (dlp - inner)


@dataclass
class CenterState:
    """Running class centers for the optional center-loss term."""

    centers: np.ndarray
    update_rate: float = 0.5

    @classmethod
    def zeros(cls, feature_width: int, update_rate: float = 0.5) -> "CenterState":
        return cls(centers=np.zeros((2, feature_width)), update_rate=update_rate)

    def update(self, features: np.ndarray, class_idx: np.ndarray) -> None:
        """Move each class center toward the mean of its batch members."""
        for c in (0, 1):
            mask = class_idx == c
            if mask.any():
                delta = features[mask].mean(axis=0) - self.centers[c]
                self.centers[c] += self.update_rate * delta


def center_loss_term(
    features: np.ndarray,
    class_idx: np.ndarray,
    centers: np.ndarray,
    weight: float,
) -> tuple[float, np.ndarray]:
    """Half squared distance of features to their class centers.

    Returns the batch-mean penalty 0.5 * weight * mean ||f - c||^2 and
    its gradient with respect to the features.
    """
    diffs = features - centers[class_idx]
    n = features.shape[0]
    value = 0.5 * weight * float((diffs * diffs).sum()) / n
    dfeat = weight * diffs / n
    return value, dfeat


def _loss_gradients_full(
    model: Model,
    x: np.ndarray,
    targets: np.ndarray,
    center: CenterState | None = None,
    center_weight: float = 0.0,
):
    """Core backward pass. x: (n, 1, 20, 40), targets: (n, 2).

    Returns (loss, grads by parameter name, probs, features).
    """
    probs, caches = _forward_batch(model, x, keep_caches=True)
    features = caches["features"]
    total = _xent_value(probs, targets)
    dfeat_extra = None
    if center is not None and center_weight != 0.0:
        class_idx = targets.argmax(axis=1)
        c_value, dfeat_extra = center_loss_term(
            features, class_idx, center.centers, center_weight
        )
        total += c_value

    grads: dict[str, np.ndarray] = {}
    dz = _xent_backward(probs, targets)
    # final fc layer
    a_in = features
    grads[f"fc{len(model.fc_weights) - 1}.weight"] = dz.T @ a_in
    grads[f"fc{len(model.fc_weights) - 1}.bias"] = dz.sum(axis=0)
    da = dz @ model.fc_weights[-1]
    if dfeat_extra is not None:
        da = da + dfeat_extra
    # hidden fc layers, in reverse
    for li in range(len(model.fc_weights) - 2, -1, -1):
        a_prev, z = caches["fc"][li]
        dz = da * (z > 0.0)
        grads[f"fc{li}.weight"] = dz.T @ a_prev
        grads[f"fc{li}.bias"] = dz.sum(axis=0)
        da = dz @ model.fc_weights[li]
    dconv = da.reshape(caches["conv_out_shape"])
    for li in range(len(model.conv_kernels) - 1, -1, -1):
        h_in, pre, act, switch = caches["conv"][li]
        if switch is not None:
            dact = _maxpool_bwd(dconv, switch, act.shape[2], act.shape[3])
        else:
            dact = dconv
        dpre = dact * (pre > 0.0)
        k = model.conv_kernels[li]
        dk_corr = kernels.corr2d_grad_kernel(h_in, dpre, k.shape[2], k.shape[3])
        grads[f"conv{li}.kernel"] = np.ascontiguousarray(dk_corr[:, :, ::-1, ::-1])
        grads[f"conv{li}.bias"] = dpre.sum(axis=(0, 2, 3))
        if li > 0:
            dconv = kernels.corr2d_fwd(
                dpre, np.ascontiguousarray(k.transpose(1, 0, 2, 3))
            )
    return total, grads, probs, features


def loss_gradients(
    model: Model,
    batch: list[tuple[np.ndarray, TargetDistribution]],
    center: CenterState | None = None,
    center_weight: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over a batch and its gradients for every parameter.

    batch is a list of (pair image, target). The mean makes gradients
    invariant to duplicating the batch.
    """
    if not batch:
        raise ValueCheckError("batch must not be empty")
    x = np.stack([_check_pair_image(img) for img, _ in batch])[:, None]
    targets = np.stack([t.probs for _, t in batch])
    value, grads, _, _ = _loss_gradients_full(
        model, x, targets, center=center, center_weight=center_weight
    )
    return value, grads


def parameter_vector(model: Model) -> np.ndarray:
    """All parameters flattened into one vector, in named order."""
    return np.concatenate([p.reshape(-1) for _, p in model.named_parameters()])


def set_parameter_vector(model: Model, vec: np.ndarray) -> None:
    """Write a flat vector produced by parameter_vector back in place."""
    vec = np.asarray(vec, dtype=np.float64)
    needed = sum(p.size for _, p in model.named_parameters())
    if vec.size != needed:
        raise ShapeError(f"vector has {vec.size} entries, model needs {needed}")
    offset = 0
    for _, p in model.named_parameters():
        p.flat[:] = vec[offset : offset + p.size]
        offset += p.size


def save_checkpoint(model: Model, path, epoch: int = 0,
                    train_loss: float = 0.0) -> None:
    """Write the model as structured JSON text.

    Parameters are stored as flat row-major decimal lists; repr-exact
    floats make a save/load round trip bit-exact.
    """
    record = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "parameters": [
            {"name": name, "shape": list(p.shape), "data": p.reshape(-1).tolist()}
            for name, p in model.named_parameters()
        ],
        "epoch": int(epoch),
        "train_loss": float(train_loss),
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild a model from save_checkpoint output.

    Returns (model, meta) where meta carries epoch and train_loss.
    Raises CheckpointError on a missing file, malformed JSON, version
    mismatch, or parameter names/shapes not matching the config.
    """
    try:
        with open(path) as fh:
            record = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} does not exist")
    except (json.JSONDecodeError, UnicodeDecodeError, OSError) as exc:
        raise CheckpointError(f"checkpoint {path} is malformed: {exc}")
    if not isinstance(record, dict):
        raise CheckpointError(f"checkpoint {path} is malformed: not an object")
    if record.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path}: unsupported format_version "
            f"{record.get('format_version')!r}"
        )
    try:
        config = ModelConfig.from_dict(record["config"])
        stored = {p["name"]: p for p in record["parameters"]}
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint {path} is malformed: {exc}")
    model = init_model(config)
    expected = model.named_parameters()
    if set(stored) != {name for name, _ in expected}:
        raise CheckpointError(
            f"checkpoint {path}: parameter names do not match the config"
        )
    for name, p in expected:
        entry = stored[name]
        if tuple(entry["shape"]) != p.shape:
            raise CheckpointError(
                f"checkpoint {path}: {name} has shape {entry['shape']}, "
                f"expected {list(p.shape)}"
            )
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != p.size:
            raise CheckpointError(
                f"checkpoint {path}: {name} holds {data.size} values, "
                f"expected {p.size}"
            )
        p.flat[:] = data
    meta = {
        "epoch": int(record.get("epoch", 0)),
        "train_loss": float(record.get("train_loss", 0.0)),
    }
    return model, meta
