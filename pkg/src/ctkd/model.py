"""Streaming conformer-transducer model.

Encoder: input projection + learned absolute positions, then conformer blocks
(feed-forward, causal convolution, causally masked self-attention,
feed-forward, each residual, then a final layer norm), with stride-2 time
max-pooling after each of the first ``pooling_layers`` blocks.  Prediction
network: unidirectional LSTM stack over the embedded label prefix.  Joint:
additive combination projected through a tied embedding/output matrix.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


class ModelError(Exception):
    pass


class ConfigError(ModelError):
    pass


class CheckpointFormatError(ModelError):
    pass


class CheckpointIntegrityError(ModelError):
    pass


class ConfigMismatchError(ModelError):
    pass


CHECKPOINT_MAGIC = b"CTKD"
CHECKPOINT_VERSION = 1

ATTENTION_MASK_VALUE = -1e30


@dataclass
class EncoderConfig:
    num_layers: int = 2
    model_dim: int = 32
    attention_heads: int = 2
    ff_expansion: int = 4
    conv_kernel: int = 15
    pooling_layers: int = 2
    dropout: float = 0.1
    max_positions: int = 4096

    def validate(self):
        if self.num_layers < 1:
            raise ConfigError("encoder.num_layers must be >= 1")
        if self.model_dim % self.attention_heads != 0:
            raise ConfigError(
                f"encoder.model_dim {self.model_dim} not divisible by attention_heads {self.attention_heads}"
            )
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError(f"encoder.conv_kernel must be odd, got {self.conv_kernel}")
        if self.pooling_layers < 0 or self.pooling_layers > self.num_layers:
            raise ConfigError("encoder.pooling_layers must be in [0, num_layers]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("encoder.dropout must be in [0, 1)")


@dataclass
class DecoderConfig:
    num_layers: int = 1
    hidden_dim: int = 32
    dropout: float = 0.1

    def validate(self):
        if self.num_layers < 1:
            raise ConfigError("decoder.num_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("decoder.dropout must be in [0, 1)")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    joint_dim: int = 32
    vocab_size: int = 8
    blank_id: int = 0
    input_dim: int = 40

    def validate(self):
        self.encoder.validate()
        self.decoder.validate()
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if self.blank_id != 0:
            raise ConfigError("blank_id must be 0")
        if self.joint_dim < 1 or self.input_dim < 1:
            raise ConfigError("joint_dim and input_dim must be >= 1")

    @property
    def pooling_factor(self) -> int:
        return 2 ** self.encoder.pooling_layers


# canonical serialization order; checkpoints depend on it being stable
_CONFIG_FIELDS = [
    ("input_dim", int),
    ("vocab_size", int),
    ("blank_id", int),
    ("joint_dim", int),
    ("encoder.num_layers", int),
    ("encoder.model_dim", int),
    ("encoder.attention_heads", int),
    ("encoder.ff_expansion", int),
    ("encoder.conv_kernel", int),
    ("encoder.pooling_layers", int),
    ("encoder.dropout", float),
    ("encoder.max_positions", int),
    ("decoder.num_layers", int),
    ("decoder.hidden_dim", int),
    ("decoder.dropout", float),
]


def _config_get(config: ModelConfig, dotted: str):
    obj = config
    for part in dotted.split("."):
        obj = getattr(obj, part)
    return obj


def _config_set(config: ModelConfig, dotted: str, value):
    parts = dotted.split(".")
    obj = config
    for part in parts[:-1]:
        obj = getattr(obj, part)
    setattr(obj, parts[-1], value)


def model_config_to_text(config: ModelConfig) -> str:
    lines = [f"model.{key} = {_config_get(config, key)!r}" for key, _ in _CONFIG_FIELDS]
    return "\n".join(lines) + "\n"


def model_config_from_items(items: dict[str, str], prefix: str = "model.") -> ModelConfig:
    config = ModelConfig()
    for key, caster in _CONFIG_FIELDS:
        full = prefix + key
        if full in items:
            raw = items[full].strip().strip("'\"")
            try:
                _config_set(config, key, caster(float(raw)) if caster is int else caster(raw))
            except ValueError as e:
                raise ConfigError(f"bad value for {full}: {raw}") from e
    config.validate()
    return config


# ---------------------------------------------------------------------------
# parameter shapes and counting


def parameter_shapes(config: ModelConfig) -> dict[str, tuple]:
    """All named parameter tensors implied by the config (tied tensors once)."""
    config.validate()
    enc, dec = config.encoder, config.decoder
    d, jd = enc.model_dim, config.joint_dim
    ed = enc.ff_expansion * d
    shapes: dict[str, tuple] = {}
    shapes["enc.input_proj.W"] = (config.input_dim, d)
    shapes["enc.input_proj.b"] = (d,)
    shapes["enc.positions"] = (enc.max_positions, d)
    for i in range(enc.num_layers):
        p = f"enc.block{i}."
        for ff in ("ff1", "ff2"):
            shapes[p + ff + ".ln_g"] = (d,)
            shapes[p + ff + ".ln_b"] = (d,)
            shapes[p + ff + ".W1"] = (d, ed)
            shapes[p + ff + ".b1"] = (ed,)
            shapes[p + ff + ".W2"] = (ed, d)
            shapes[p + ff + ".b2"] = (d,)
        shapes[p + "conv.pw1_W"] = (d, 2 * d)
        shapes[p + "conv.pw1_b"] = (2 * d,)
        shapes[p + "conv.dw_W"] = (enc.conv_kernel, d)
        shapes[p + "conv.dw_b"] = (d,)
        shapes[p + "conv.ln_g"] = (d,)
        shapes[p + "conv.ln_b"] = (d,)
        shapes[p + "conv.pw2_W"] = (d, d)
        shapes[p + "conv.pw2_b"] = (d,)
        shapes[p + "attn.ln_g"] = (d,)
        shapes[p + "attn.ln_b"] = (d,)
        for mat in ("Wq", "Wk", "Wv", "Wo"):
            shapes[p + "attn." + mat] = (d, d)
        for vec in ("bq", "bk", "bv", "bo"):
            shapes[p + "attn." + vec] = (d,)
        shapes[p + "final_ln.g"] = (d,)
        shapes[p + "final_ln.b"] = (d,)
    # tied embedding / output matrix: rows 0..V (row 0 = blank output row)
    shapes["embed"] = (config.vocab_size + 1, jd)
    in_dim = jd
    for i in range(dec.num_layers):
        h = dec.hidden_dim
        shapes[f"dec.lstm{i}.Wx"] = (in_dim, 4 * h)
        shapes[f"dec.lstm{i}.Wh"] = (h, 4 * h)
        shapes[f"dec.lstm{i}.b"] = (4 * h,)
        in_dim = h
    shapes["joint.enc_proj.W"] = (d, jd)
    shapes["joint.enc_proj.b"] = (jd,)
    shapes["joint.pred_proj.W"] = (dec.hidden_dim, jd)
    shapes["joint.pred_proj.b"] = (jd,)
    shapes["joint.out_b"] = (config.vocab_size + 1,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    """Closed-form parameter count (kept algebraic, independent of instantiation)."""
    config.validate()
    enc, dec = config.encoder, config.decoder
    d, jd, v1 = enc.model_dim, config.joint_dim, config.vocab_size + 1
    ed = enc.ff_expansion * d
    ff = 2 * d + (d * ed + ed) + (ed * d + d)
    conv = (d * 2 * d + 2 * d) + (enc.conv_kernel * d + d) + 2 * d + (d * d + d)
    attn = 2 * d + 4 * (d * d + d)
    block = 2 * ff + conv + attn + 2 * d
    encoder = (config.input_dim * d + d) + enc.max_positions * d + enc.num_layers * block
    lstm = 0
    in_dim = jd
    for _ in range(dec.num_layers):
        h = dec.hidden_dim
        lstm += in_dim * 4 * h + h * 4 * h + 4 * h
        in_dim = h
    joint = (d * jd + jd) + (dec.hidden_dim * jd + jd) + v1 * jd + v1
    return encoder + lstm + joint


def init_parameters(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("ln_g", "g"):
            data = np.ones(shape)
        elif leaf in ("ln_b", "b", "b1", "b2", "pw1_b", "pw2_b", "dw_b", "bq", "bk", "bv", "bo", "out_b"):
            data = np.zeros(shape)
        elif name == "enc.positions":
            data = rng.normal(0.0, 0.02, size=shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            fan_in = shape[0]
            data = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
        params[name] = dc.parameter(data, name=name)
    return params


# ---------------------------------------------------------------------------
# model


class Model:
    def __init__(self, config: ModelConfig, seed: int = 0, params: dict[str, Tensor] | None = None):
        config.validate()
        self.config = config
        if params is None:
            params = init_parameters(config, seed)
        else:
            expected = parameter_shapes(config)
            for name, shape in expected.items():
                if name not in params or tuple(params[name].shape) != tuple(shape):
                    raise CheckpointIntegrityError(f"parameter {name}: expected shape {shape}")
        self.params = params
        self._mask_cache: dict[int, Tensor] = {}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- encoder ------------------------------------------------------------

    def _causal_mask(self, t_len: int) -> Tensor:
        if t_len not in self._mask_cache:
            mask = np.triu(np.full((t_len, t_len), ATTENTION_MASK_VALUE), k=1)
            self._mask_cache[t_len] = Tensor(mask)
        return self._mask_cache[t_len]

    def _ff(self, x: Tensor, prefix: str, training: bool) -> Tensor:
        p = self.params
        rate = self.config.encoder.dropout
        h = dc.layer_norm(x, p[prefix + ".ln_g"], p[prefix + ".ln_b"])
        h = dc.swish(dc.linear(h, p[prefix + ".W1"], p[prefix + ".b1"]))
        h = dc.dropout(h, rate, training)
        h = dc.linear(h, p[prefix + ".W2"], p[prefix + ".b2"])
        return dc.dropout(h, rate, training)

    def _conv(self, x: Tensor, prefix: str, training: bool) -> Tensor:
        p = self.params
        rate = self.config.encoder.dropout
        h = dc.linear(x, p[prefix + ".pw1_W"], p[prefix + ".pw1_b"])
        h = dc.glu(h)
        h = dc.depthwise_conv1d_causal(h, p[prefix + ".dw_W"], p[prefix + ".dw_b"])
        h = dc.layer_norm(h, p[prefix + ".ln_g"], p[prefix + ".ln_b"])
        h = dc.swish(h)
        h = dc.linear(h, p[prefix + ".pw2_W"], p[prefix + ".pw2_b"])
        return dc.dropout(h, rate, training)

    def _attention(self, x: Tensor, prefix: str, training: bool, causal_mask: bool) -> Tensor:
        p = self.params
        enc = self.config.encoder
        t_len = x.shape[0]
        heads = enc.attention_heads
        dh = enc.model_dim // heads
        h = dc.layer_norm(x, p[prefix + ".ln_g"], p[prefix + ".ln_b"])

        def split_heads(t):
            return dc.transpose(dc.reshape(t, (t_len, heads, dh)), (1, 0, 2))

        q = split_heads(dc.linear(h, p[prefix + ".Wq"], p[prefix + ".bq"]))
        k = split_heads(dc.linear(h, p[prefix + ".Wk"], p[prefix + ".bk"]))
        v = split_heads(dc.linear(h, p[prefix + ".Wv"], p[prefix + ".bv"]))
        scores = dc.scale(dc.matmul(q, dc.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        if causal_mask:
            scores = dc.add(scores, self._causal_mask(t_len))
        attn = dc.softmax(scores, axis=-1)
        ctx = dc.matmul(attn, v)
        ctx = dc.reshape(dc.transpose(ctx, (1, 0, 2)), (t_len, enc.model_dim))
        out = dc.linear(ctx, p[prefix + ".Wo"], p[prefix + ".bo"])
        return dc.dropout(out, enc.dropout, training)

    def conformer_block(self, x: Tensor, index: int, training: bool = False, causal_mask: bool = True) -> Tensor:
        """One block: residual FF, residual conv, residual attention, residual FF, layer norm."""
        prefix = f"enc.block{index}"
        p = self.params
        x = dc.add(x, self._ff(x, prefix + ".ff1", training))
        x = dc.add(x, self._conv(x, prefix + ".conv", training))
        x = dc.add(x, self._attention(x, prefix + ".attn", training, causal_mask))
        x = dc.add(x, self._ff(x, prefix + ".ff2", training))
        return dc.layer_norm(x, p[prefix + ".final_ln.g"], p[prefix + ".final_ln.b"])

    def encode(self, features, training: bool = False) -> Tensor:
        """Encoder states (T', model_dim) with T' = input frames floor-pooled."""
        enc = self.config.encoder
        x_in = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=np.float64))
        t_len = x_in.shape[0]
        if x_in.ndim != 2 or x_in.shape[1] != self.config.input_dim:
            raise ModelError(f"expected features (T, {self.config.input_dim}), got {x_in.shape}")
        if t_len < self.config.pooling_factor:
            raise ModelError(f"need at least {self.config.pooling_factor} frames, got {t_len}")
        if t_len > enc.max_positions:
            raise ModelError(f"{t_len} frames exceed max_positions {enc.max_positions}")
        x = dc.linear(x_in, self.params["enc.input_proj.W"], self.params["enc.input_proj.b"])
        pos = dc.slice_(self.params["enc.positions"], (0, None), (x.shape[0], None))
        x = dc.add(x, pos)
        for i in range(enc.num_layers):
            x = self.conformer_block(x, i, training=training)
            x = dc.dropout(x, enc.dropout, training)
            if i < enc.pooling_layers:
                x = dc.max_pool1d_time(x, window=2)
        return x

    # -- prediction network -------------------------------------------------

    def _check_labels(self, labels):
        for lab in labels:
            if not 1 <= lab <= self.config.vocab_size:
                raise ModelError(f"token {lab} out of range [1, {self.config.vocab_size}]")

    def _lstm_step(self, x: Tensor, h: Tensor, c: Tensor, layer: int) -> tuple[Tensor, Tensor]:
        p = self.params
        hid = self.config.decoder.hidden_dim
        z = dc.add(
            dc.add(dc.matmul(x, p[f"dec.lstm{layer}.Wx"]), dc.matmul(h, p[f"dec.lstm{layer}.Wh"])),
            p[f"dec.lstm{layer}.b"],
        )
        gi = dc.sigmoid(dc.slice_(z, (None, 0), (None, hid)))
        gf = dc.sigmoid(dc.slice_(z, (None, hid), (None, 2 * hid)))
        gg = dc.tanh(dc.slice_(z, (None, 2 * hid), (None, 3 * hid)))
        go = dc.sigmoid(dc.slice_(z, (None, 3 * hid), (None, 4 * hid)))
        c_new = dc.add(dc.multiply(gf, c), dc.multiply(gi, gg))
        h_new = dc.multiply(go, dc.tanh(c_new))
        return h_new, c_new

    def predict(self, labels, training: bool = False) -> Tensor:
        """Prediction states (U+1, hidden_dim); position 0 is the start state."""
        self._check_labels(labels)
        dec = self.config.decoder
        jd = self.config.joint_dim
        steps = [Tensor(np.zeros((1, jd)))]
        for lab in labels:
            steps.append(dc.embedding_lookup(self.params["embed"], np.array([lab])))
        hs = [Tensor(np.zeros((1, dec.hidden_dim))) for _ in range(dec.num_layers)]
        cs = [Tensor(np.zeros((1, dec.hidden_dim))) for _ in range(dec.num_layers)]
        outputs = []
        for x in steps:
            for layer in range(dec.num_layers):
                hs[layer], cs[layer] = self._lstm_step(x, hs[layer], cs[layer], layer)
                x = hs[layer]
                if training and layer < dec.num_layers - 1:
                    x = dc.dropout(x, dec.dropout, training)
            outputs.append(x)
        return dc.concat(*outputs, axis=0)

    # -- joint --------------------------------------------------------------

    def joint(self, enc_states: Tensor, pred_states: Tensor, temperature: float = 1.0) -> Tensor:
        """Log-distributions over V+1 symbols at every lattice node: (T', U+1, V+1)."""
        if temperature <= 0:
            raise ModelError(f"temperature must be positive, got {temperature}")
        t_len, u1 = enc_states.shape[0], pred_states.shape[0]
        e = dc.linear(enc_states, self.params["joint.enc_proj.W"], self.params["joint.enc_proj.b"])
        p = dc.linear(pred_states, self.params["joint.pred_proj.W"], self.params["joint.pred_proj.b"])
        comb = dc.add(dc.reshape(e, (t_len, 1, self.config.joint_dim)),
                      dc.reshape(p, (1, u1, self.config.joint_dim)))
        act = dc.tanh(comb)
        logits = dc.add(dc.matmul(act, dc.transpose(self.params["embed"], (1, 0))),
                        self.params["joint.out_b"])
        if temperature != 1.0:
            logits = dc.scale(logits, 1.0 / temperature)
        return dc.log_softmax(logits, axis=-1)

    def lattice(self, features, labels, training: bool = False, temperature: float = 1.0) -> Tensor:
        enc = self.encode(features, training=training)
        pred = self.predict(labels, training=training)
        return self.joint(enc, pred, temperature=temperature)

    # -- fast numpy paths for decoding (no graph) ---------------------------

    def start_state(self):
        """Initial prediction-network state: per-layer (h, c) plus the output vector."""
        return self._numpy_predict_step(np.zeros(self.config.joint_dim),
                                        [(np.zeros(self.config.decoder.hidden_dim),
                                          np.zeros(self.config.decoder.hidden_dim))
                                         for _ in range(self.config.decoder.num_layers)])

    def predict_step(self, token: int, state):
        """Advance the prediction network by one emitted token."""
        self._check_labels([token])
        x = self.params["embed"].data[token]
        return self._numpy_predict_step(x, state[0])

    def _numpy_predict_step(self, x: np.ndarray, layer_states):
        hid = self.config.decoder.hidden_dim
        new_states = []
        for layer, (h, c) in enumerate(layer_states):
            wx = self.params[f"dec.lstm{layer}.Wx"].data
            wh = self.params[f"dec.lstm{layer}.Wh"].data
            b = self.params[f"dec.lstm{layer}.b"].data
            z = x @ wx + h @ wh + b
            gi = _sigmoid(z[:hid])
            gf = _sigmoid(z[hid : 2 * hid])
            gg = np.tanh(z[2 * hid : 3 * hid])
            go = _sigmoid(z[3 * hid :])
            c = gf * c + gi * gg
            h = go * np.tanh(c)
            new_states.append((h, c))
            x = h
        return (new_states, x)

    def joint_step(self, enc_vec: np.ndarray, pred_out: np.ndarray, temperature: float = 1.0) -> np.ndarray:
        """Log-distribution at a single lattice node, pure numpy."""
        e = enc_vec @ self.params["joint.enc_proj.W"].data + self.params["joint.enc_proj.b"].data
        p = pred_out @ self.params["joint.pred_proj.W"].data + self.params["joint.pred_proj.b"].data
        act = np.tanh(e + p)
        logits = act @ self.params["embed"].data.T + self.params["joint.out_b"].data
        logits = logits / temperature
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0


def checkpoint_from_model(model: Model, step: int = 0, seed: int = 0) -> Checkpoint:
    return Checkpoint(
        config=model.config,
        params={name: p.data.copy() for name, p in model.params.items()},
        step=step,
        seed=seed,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    params = {name: dc.parameter(data.copy(), name=name) for name, data in ckpt.params.items()}
    return Model(ckpt.config, params=params)


def save_checkpoint(source: Model | Checkpoint, path: str, step: int | None = None, seed: int | None = None) -> None:
    ckpt = checkpoint_from_model(source) if isinstance(source, Model) else source
    if step is not None:
        ckpt.step = step
    if seed is not None:
        ckpt.seed = seed
    blob = (
        model_config_to_text(ckpt.config)
        + f"meta.step = {int(ckpt.step)}\n"
        + f"meta.seed = {int(ckpt.seed)}\n"
    ).encode()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for name in sorted(ckpt.params):
            data = ckpt.params[name]
            name_bytes = name.encode()
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<B", data.ndim))
            for extent in data.shape:
                f.write(struct.pack("<Q", extent))
            f.write(data.astype("<f4").tobytes())


def load_checkpoint(path: str, expected_config: ModelConfig | None = None) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad checkpoint magic")
    version, blob_len = struct.unpack("<IQ", raw[4:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    if offset + blob_len > len(raw):
        raise CheckpointIntegrityError(f"{path}: truncated config blob")
    items = _parse_blob(raw[offset : offset + blob_len].decode())
    offset += blob_len
    config = model_config_from_items(items)
    step = int(items.get("meta.step", "0"))
    seed = int(items.get("meta.seed", "0"))

    params: dict[str, np.ndarray] = {}
    while offset < len(raw):
        try:
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset : offset + name_len].decode()
            if len(raw[offset : offset + name_len]) != name_len:
                raise struct.error("short name")
            offset += name_len
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            extents = struct.unpack_from("<" + "Q" * rank, raw, offset)
            offset += 8 * rank
            count = int(np.prod(extents)) if extents else 1
            payload = raw[offset : offset + 4 * count]
            if len(payload) != 4 * count:
                raise struct.error("short payload")
            offset += 4 * count
        except struct.error as e:
            raise CheckpointIntegrityError(f"{path}: truncated parameter record") from e
        params[name] = np.frombuffer(payload, dtype="<f4").reshape(extents).astype(np.float64)

    expected_shapes = parameter_shapes(config)
    if set(params) != set(expected_shapes):
        missing = set(expected_shapes) - set(params)
        extra = set(params) - set(expected_shapes)
        raise CheckpointIntegrityError(f"{path}: parameter set mismatch (missing {missing}, extra {extra})")
    for name, shape in expected_shapes.items():
        if tuple(params[name].shape) != tuple(shape):
            raise CheckpointIntegrityError(
                f"{path}: parameter {name} has shape {params[name].shape}, config implies {shape}"
            )
    if expected_config is not None and config != expected_config:
        raise ConfigMismatchError(f"{path}: checkpoint config does not match the expected config")
    return Checkpoint(config=config, params=params, step=step, seed=seed)


def _parse_blob(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    return items
