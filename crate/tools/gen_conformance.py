#!/usr/bin/env python3
"""Writes the extractor conformance corpus.

A two-layer ReLU network with fixed weights plays the role of the extractor.
Each case is an .oodf dump plus a .meta.json sidecar carrying channel
checksums and reference MSP / ODIN / MCDropout scores computed here, in
float64, from the exact float32 values stored in the dump.

    python3 tools/gen_conformance.py crates/core/tests/data/conformance
"""

import hashlib
import json
import struct
import sys
from pathlib import Path

import numpy as np

IN_DIM, FEAT_DIM, CLASSES = 6, 8, 3


def network(rng):
    return {
        "w1": rng.normal(0.0, 0.6, (FEAT_DIM, IN_DIM)),
        "b1": rng.normal(0.0, 0.1, FEAT_DIM),
        "w2": rng.normal(0.0, 0.8, (CLASSES, FEAT_DIM)),
        "b2": rng.normal(0.0, 0.1, CLASSES),
    }


def hidden(net, x, mask=None):
    h = np.maximum(net["w1"] @ x + net["b1"], 0.0)
    return h if mask is None else h * mask


def softmax(v, t=1.0):
    s = v / t
    e = np.exp(s - s.max())
    return e / e.sum()


def odin_input(net, x, t, eps):
    # gradient of log max softmax(f(x)/T) with respect to x, by hand
    pre = net["w1"] @ x + net["b1"]
    h = np.maximum(pre, 0.0)
    f = net["w2"] @ h + net["b2"]
    p = softmax(f, t)
    y = int(np.argmax(f))
    d_f = (np.eye(CLASSES)[y] - p) / t
    d_h = net["w2"].T @ d_f
    d_x = net["w1"].T @ (d_h * (pre > 0))
    return x + eps * np.sign(d_x)


def f32(a):
    return np.asarray(a, dtype=np.float32)


def case(net, rng, n, passes, rate, t, eps, with_labels):
    xs = rng.normal(0.0, 1.0, (n, IN_DIM))
    z = np.stack([hidden(net, x) for x in xs])
    logits = z @ net["w2"].T + net["b2"]
    odin = np.stack([net["w2"] @ hidden(net, odin_input(net, x, t, eps)) + net["b2"] for x in xs])
    stack = np.zeros((n, passes, CLASSES))
    for i, x in enumerate(xs):
        for k in range(passes):
            keep = (rng.random(FEAT_DIM) >= rate) / (1.0 - rate)
            stack[i, k] = softmax(net["w2"] @ hidden(net, x, keep) + net["b2"])
    labels = np.argmax(logits, axis=1) if with_labels else None
    return f32(z), labels, f32(logits), f32(stack), f32(odin)


def encode(z, labels, logits, stack, odin):
    n, d = z.shape
    t, c = stack.shape[1], logits.shape[1]
    flags = (1 if labels is not None else 0) | 2 | 4 | 8
    header = b"OODF" + struct.pack("<HBB4Q", 1, 0, flags, n, d, c, t)
    channels = [("features", z.tobytes())]
    if labels is not None:
        channels.append(("labels", np.asarray(labels, dtype="<u4").tobytes()))
    channels += [("logits", logits.tobytes()), ("dropout", stack.tobytes()), ("odin", odin.tobytes())]
    body = header + b"".join(b for _, b in channels)
    sums = {name: hashlib.sha256(b).hexdigest() for name, b in channels}
    return body, sums


def references(logits, stack, odin, t):
    l64, s64, o64 = (np.asarray(a, dtype=np.float64) for a in (logits, stack, odin))
    msp = [float(softmax(r).max()) for r in l64]
    odin_scores = [float(softmax(r, t).max()) for r in o64]
    mcd = []
    for sample in s64:
        mean = sample.mean(axis=0)
        nz = mean[mean > 0]
        mcd.append(float((nz * np.log(nz)).sum()))
    return {"msp": msp, "odin": odin_scores, "mcdropout": mcd}


def main(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240611)
    net = network(rng)
    cases = [
        ("tiny_mlp_t1_eps0014", 12, 5, 0.2, 1.0, 0.0014, True),
        ("tiny_mlp_t1_eps0", 9, 4, 0.2, 1.0, 0.0, True),
        ("tiny_mlp_t1000_unlabeled", 7, 3, 0.5, 1000.0, 0.0014, False),
    ]
    for name, n, passes, rate, t, eps, with_labels in cases:
        z, labels, logits, stack, odin = case(net, rng, n, passes, rate, t, eps, with_labels)
        body, sums = encode(z, labels, logits, stack, odin)
        (out / f"{name}.oodf").write_bytes(body)
        sidecar = {
            "n": int(z.shape[0]),
            "d": int(z.shape[1]),
            "c": CLASSES,
            "t": passes,
            "meta": {
                "checkpoint": "tiny-mlp",
                "dropout_passes": passes,
                "odin_temperature": t,
                "odin_epsilon": eps,
            },
            "checksums": sums,
            "reference_scores": references(logits, stack, odin, t),
        }
        (out / f"{name}.meta.json").write_text(json.dumps(sidecar, indent=2) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/data/conformance")
