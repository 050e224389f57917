"""Gradient-check suites for the op set, the losses, and a tiny end-to-end model.

Shared by the ``gradcheck`` CLI command and the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import distill, rnnt
from .model import DecoderConfig, EncoderConfig, Model, ModelConfig


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}  max_rel_err={self.worst:.3e}"


def _check(name: str, fn, params: dict, epsilon=1e-5, tolerance=1e-4) -> SuiteResult:
    report = dc.check_gradients(fn, params, epsilon=epsilon, tolerance=tolerance)
    return SuiteResult(name=name, passed=report.passed, worst=report.worst)


def _proj_check(name: str, build_out, params: dict, rng: np.random.Generator) -> SuiteResult:
    """Check gradients of a fixed random scalar projection of ``build_out()``."""
    with dc.no_grad():
        shape = build_out().shape
    w = dc.Tensor(rng.normal(size=shape))

    def fn():
        return dc.sum_(dc.multiply(build_out(), w))

    return _check(name, fn, params)


def op_gradchecks(seed: int = 0) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    results = []

    def param(shape, scale=1.0):
        return dc.parameter(rng.normal(scale=scale, size=shape))

    shapes_2d = [(2, 3), (4, 4), (1, 5)]
    unary_ops = [
        ("sigmoid", dc.sigmoid),
        ("tanh", dc.tanh),
        ("swish", dc.swish),
        ("softmax", dc.softmax),
        ("log_softmax", dc.log_softmax),
    ]
    for op_name, op in unary_ops:
        for shape in shapes_2d:
            x = param(shape)
            results.append(_proj_check(f"{op_name}{shape}", lambda x=x, op=op: op(x), {"x": x}, rng))

    # relu: keep inputs away from the kink
    for shape in shapes_2d:
        x = param(shape)
        x.data += np.sign(x.data) * 0.5
        results.append(_proj_check(f"relu{shape}", lambda x=x: dc.relu(x), {"x": x}, rng))

    for shape in [(2, 4), (3, 6), (1, 2)]:
        x = param(shape)
        results.append(_proj_check(f"glu{shape}", lambda x=x: dc.glu(x), {"x": x}, rng))

    for a_shape, b_shape in [((2, 3), (3, 4)), ((4, 2), (2, 2)), ((2, 3, 4), (4, 5))]:
        a, b = param(a_shape), param(b_shape)
        results.append(
            _proj_check(f"matmul{a_shape}x{b_shape}", lambda a=a, b=b: dc.matmul(a, b), {"a": a, "b": b}, rng)
        )

    for a_shape, b_shape in [((2, 3), (2, 3)), ((2, 3), (3,)), ((2, 1, 4), (3, 1))]:
        a, b = param(a_shape), param(b_shape)
        results.append(
            _proj_check(f"add{a_shape}+{b_shape}", lambda a=a, b=b: dc.add(a, b), {"a": a, "b": b}, rng)
        )
        results.append(
            _proj_check(f"multiply{a_shape}*{b_shape}", lambda a=a, b=b: dc.multiply(a, b), {"a": a, "b": b}, rng)
        )

    for in_dim, out_dim, rows in [(3, 4, 2), (5, 2, 3), (2, 2, 1)]:
        x, w, b = param((rows, in_dim)), param((in_dim, out_dim)), param((out_dim,))
        results.append(
            _proj_check(
                f"linear({rows},{in_dim})->({out_dim})",
                lambda x=x, w=w, b=b: dc.linear(x, w, b),
                {"x": x, "w": w, "b": b},
                rng,
            )
        )

    for shape in shapes_2d:
        x, g, b = param(shape), param((shape[-1],)), param((shape[-1],))
        results.append(
            _proj_check(
                f"layer_norm{shape}",
                lambda x=x, g=g, b=b: dc.layer_norm(x, g, b),
                {"x": x, "g": g, "b": b},
                rng,
            )
        )

    for t_len, ch, k in [(5, 3, 3), (8, 2, 5), (4, 4, 2)]:
        x, w, b = param((t_len, ch)), param((k, ch)), param((ch,))
        results.append(
            _proj_check(
                f"depthwise_conv1d_causal(T={t_len},C={ch},K={k})",
                lambda x=x, w=w, b=b: dc.depthwise_conv1d_causal(x, w, b),
                {"x": x, "w": w, "b": b},
                rng,
            )
        )

    for t_len, ch in [(6, 3), (7, 2), (4, 5)]:
        x = param((t_len, ch))
        results.append(
            _proj_check(f"max_pool1d_time(T={t_len},C={ch})", lambda x=x: dc.max_pool1d_time(x), {"x": x}, rng)
        )

    for shapes in [[(2, 3), (4, 3)], [(1, 2), (1, 2), (3, 2)], [(2, 2), (2, 2)]]:
        xs = [param(s) for s in shapes]
        results.append(
            _proj_check(
                f"concat{shapes}",
                lambda xs=xs: dc.concat(*xs, axis=0),
                {f"x{i}": x for i, x in enumerate(xs)},
                rng,
            )
        )

    for shape, starts, stops in [
        ((4, 5), (1, 0), (3, 4)),
        ((3, 3), (0, 1), (None, None)),
        ((6, 2), (2, None), (5, None)),
    ]:
        x = param(shape)
        results.append(
            _proj_check(f"slice{shape}[{starts}:{stops}]", lambda x=x, a=starts, b=stops: dc.slice_(x, a, b), {"x": x}, rng)
        )

    for rows, dim, ids in [(5, 3, [0, 2, 2]), (4, 2, [3, 1]), (3, 4, [0, 1, 2, 0])]:
        table = param((rows, dim))
        ids = np.array(ids)
        results.append(
            _proj_check(
                f"embedding_lookup({rows},{dim}){list(ids)}",
                lambda t=table, i=ids: dc.embedding_lookup(t, i),
                {"table": table},
                rng,
            )
        )

    for shape in shapes_2d:
        x = param(shape)
        results.append(_check(f"sum{shape}", lambda x=x: dc.sum_(dc.multiply(x, x)), {"x": x}))
        results.append(_check(f"mean{shape}", lambda x=x: dc.mean_(dc.multiply(x, x)), {"x": x}))
        results.append(_check(f"scale{shape}", lambda x=x: dc.sum_(dc.scale(x, 1.7)), {"x": x}))

    for shape, new_shape in [((2, 6), (3, 4)), ((2, 3, 4), (4, 6)), ((4, 2), (8,))]:
        x = param(shape)
        results.append(
            _proj_check(f"reshape{shape}->{new_shape}", lambda x=x, s=new_shape: dc.reshape(x, s), {"x": x}, rng)
        )
    for shape, axes in [((2, 3), (1, 0)), ((2, 3, 4), (2, 0, 1)), ((3, 1, 2), (1, 2, 0))]:
        x = param(shape)
        results.append(
            _proj_check(f"transpose{shape}{axes}", lambda x=x, a=axes: dc.transpose(x, a), {"x": x}, rng)
        )

    # dropout: deterministic under a fixed tape seed
    for i, shape in enumerate(shapes_2d):
        x = param(shape)

        def build(x=x, i=i):
            with dc.Tape(seed=1234 + i):
                return dc.dropout(x, 0.4, training=True)

        results.append(_proj_check(f"dropout{shape}", build, {"x": x}, rng))

    return results


def rnnt_gradcheck(seed: int = 0, t_len: int = 3, u_len: int = 2, vocab: int = 3) -> SuiteResult:
    """Gradient w.r.t. logits, so perturbed distributions stay normalized."""
    rng = np.random.default_rng(seed)
    logits = dc.parameter(rng.normal(size=(t_len, u_len + 1, vocab + 1)))
    labels = rng.integers(1, vocab + 1, size=u_len).tolist()

    def fn():
        return rnnt.transducer_loss_node(dc.log_softmax(logits, axis=-1), labels)

    return _check(f"rnnt_loss(T={t_len},U={u_len},V={vocab})", fn, {"logits": logits})


def kd_gradcheck(seed: int = 0, t_len: int = 2, u_len: int = 2, vocab: int = 3) -> SuiteResult:
    rng = np.random.default_rng(seed)
    shape = (t_len, u_len + 1, vocab + 1)
    teacher_logits = rng.normal(size=shape)
    teacher_lp = teacher_logits - np.log(np.exp(teacher_logits).sum(axis=-1, keepdims=True))
    logits = dc.parameter(rng.normal(size=shape))

    def fn():
        return distill.kd_loss_node(teacher_lp, dc.log_softmax(logits, axis=-1))

    return _check(f"kd_loss(T={t_len},U={u_len},V={vocab})", fn, {"logits": logits})


def tiny_model_config(vocab: int = 3) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(
            num_layers=1,
            model_dim=8,
            attention_heads=2,
            ff_expansion=2,
            conv_kernel=3,
            pooling_layers=1,
            dropout=0.0,
            max_positions=16,
        ),
        decoder=DecoderConfig(num_layers=1, hidden_dim=8, dropout=0.0),
        joint_dim=8,
        vocab_size=vocab,
        input_dim=6,
    )


def end_to_end_gradcheck(seed: int = 0, alpha: float = 0.3) -> SuiteResult:
    """Combined transducer + distillation loss through the full tiny model."""
    rng = np.random.default_rng(seed)
    cfg = tiny_model_config()
    student = Model(cfg, seed=seed + 1)
    teacher = Model(cfg, seed=seed + 2)
    features = rng.normal(size=(6, cfg.input_dim))
    labels = [1, 2]
    with dc.no_grad():
        teacher_lp = teacher.lattice(features, labels, training=False).data

    def fn():
        lat = student.lattice(features, labels, training=False)
        lt = rnnt.transducer_loss_node(lat, labels)
        lk = distill.kd_loss_node(teacher_lp, lat)
        return dc.add(dc.scale(lt, 1.0 - alpha), dc.scale(lk, alpha))

    return _check("end_to_end_tiny_model", fn, student.params)


def full_suite(seed: int = 0) -> list[SuiteResult]:
    results = op_gradchecks(seed)
    results.append(rnnt_gradcheck(seed))
    results.append(kd_gradcheck(seed))
    results.append(end_to_end_gradcheck(seed))
    return results
