#!/usr/bin/env python3
"""Regenerate the networks and datasets under data/fixtures.

Everything is trained on scikit-learn's bundled 8x8 digits so no download is
needed. The 28x28 models are trained on the same digits upscaled bilinearly,
with the MNIST-FC and MNIST-CNN layer shapes.

    python3 tools/make_fixtures.py [--out data/fixtures]
"""

import argparse
import base64
import json
import pathlib

import numpy as np
import torch
from PIL import Image
from sklearn.datasets import load_digits
from torch import nn

SEED = 7


def b64(a):
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def dense(layer, encode):
    w = layer.weight.detach().double().numpy()
    out = {"kind": "dense", "bias": layer.bias.detach().double().numpy().tolist()}
    if encode:
        out["weights_b64"] = b64(w)
        out["shape"] = list(w.shape)
    else:
        out["weights"] = w.tolist()
    return out


def conv(layer):
    w = layer.weight.detach().double().numpy()
    return {
        "kind": "conv2d",
        "weights_b64": b64(w),
        "shape": list(w.shape),
        "bias": layer.bias.detach().double().numpy().tolist(),
        "stride": layer.stride[0],
        "padding": layer.padding[0],
    }


def export(model, input_shape, encode=False):
    layers = []
    for m in model:
        if isinstance(m, nn.Linear):
            layers.append(dense(m, encode))
        elif isinstance(m, nn.Conv2d):
            layers.append(conv(m))
        elif isinstance(m, nn.ReLU):
            layers.append({"kind": "relu"})
        elif isinstance(m, nn.Flatten):
            layers.append({"kind": "flatten"})
        else:
            raise TypeError(type(m))
    return {"input_shape": list(input_shape), "layers": layers}


def train(model, x, y, epochs, lr=1e-2):
    torch.manual_seed(SEED)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    xt = torch.tensor(x, dtype=torch.float32)
    yt = torch.tensor(y, dtype=torch.long)
    for _ in range(epochs):
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), 64):
            idx = perm[i : i + 64]
            opt.zero_grad()
            nn.functional.cross_entropy(model(xt[idx]), yt[idx]).backward()
            opt.step()
    with torch.no_grad():
        acc = (model(xt).argmax(1) == yt).float().mean().item()
    return acc


def predict(model, x):
    with torch.no_grad():
        return model(torch.tensor(x, dtype=torch.float32)).argmax(1).numpy()


def upscale(img8):
    im = Image.fromarray(np.uint8(np.round(img8 * 255)))
    return np.asarray(im.resize((28, 28), Image.BILINEAR), dtype=np.float64) / 255.0


def write_pgm(path, pixels):
    h, w = pixels.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.uint8(pixels).tobytes())


def pick(model, images, labels, count, shape):
    """First `count` test images the model classifies correctly after 8-bit quantization."""
    chosen = []
    for img, lab in zip(images, labels):
        q = np.round(img * 255)
        if predict(model, (q / 255.0).reshape((1,) + shape))[0] == lab:
            chosen.append((q, int(lab)))
        if len(chosen) == count:
            break
    return chosen


def save_dataset(directory, samples):
    directory.mkdir(parents=True, exist_ok=True)
    rows = ["sample,label"]
    for n, (pixels, label) in enumerate(samples):
        name = "%03d.pgm" % n
        write_pgm(directory / name, pixels)
        rows.append("%s,%d" % (name, label))
    (directory / "labels.csv").write_text("\n".join(rows) + "\n")


def tiny(out):
    # Three Gaussian blobs in four dimensions, one hidden layer of 8 units.
    rng = np.random.default_rng(SEED)
    centers = rng.uniform(0.25, 0.75, size=(3, 4))
    y = rng.integers(0, 3, size=600)
    x = np.clip(centers[y] + rng.normal(0, 0.08, size=(600, 4)), 0, 1)
    torch.manual_seed(SEED)
    model = nn.Sequential(nn.Linear(4, 8), nn.ReLU(), nn.Linear(8, 3))
    acc = train(model, x, y, epochs=60)
    d = out / "tiny"
    (d / "dataset").mkdir(parents=True, exist_ok=True)
    (d / "net.json").write_text(json.dumps(export(model, [4]), indent=1) + "\n")
    pred = predict(model, x)
    rows = ["sample,label"]
    n = 0
    for xi, yi, pi in zip(x, y, pred):
        if pi != yi:
            continue
        name = "%03d.csv" % n
        (d / "dataset" / name).write_text(",".join("%.4f" % v for v in xi) + "\n")
        rows.append("%s,%d" % (name, yi))
        n += 1
        if n == 8:
            break
    (d / "dataset" / "labels.csv").write_text("\n".join(rows) + "\n")
    return acc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/fixtures")
    out = pathlib.Path(ap.parse_args().out)
    torch.manual_seed(SEED)
    np.random.seed(SEED)

    digits = load_digits()
    x8 = digits.images / 16.0
    y = digits.target
    n_train = 1500

    print("tiny accuracy %.3f" % tiny(out))

    torch.manual_seed(SEED)
    m8 = nn.Sequential(nn.Flatten(), nn.Linear(64, 16), nn.ReLU(), nn.Linear(16, 10), nn.ReLU(), nn.Linear(10, 10))
    acc = train(m8, x8[:n_train].reshape(-1, 1, 8, 8), y[:n_train], epochs=40)
    (out / "digits8").mkdir(parents=True, exist_ok=True)
    (out / "digits8" / "net.json").write_text(json.dumps(export(m8, [1, 8, 8])) + "\n")
    save_dataset(out / "digits8" / "dataset", pick(m8, x8[n_train:], y[n_train:], 20, (1, 8, 8)))
    print("digits8 accuracy %.3f" % acc)

    x28 = np.stack([upscale(im) for im in x8])
    torch.manual_seed(SEED)
    fc = nn.Sequential(nn.Flatten(), nn.Linear(784, 10), nn.ReLU(), nn.Linear(10, 10), nn.ReLU(), nn.Linear(10, 10))
    acc = train(fc, x28[:n_train].reshape(-1, 1, 28, 28), y[:n_train], epochs=30)
    (out / "mnist_fc").mkdir(parents=True, exist_ok=True)
    (out / "mnist_fc" / "net.json").write_text(json.dumps(export(fc, [1, 28, 28], encode=True)) + "\n")
    save_dataset(out / "mnist_fc" / "dataset", pick(fc, x28[n_train:], y[n_train:], 4, (1, 28, 28)))
    print("mnist_fc accuracy %.3f" % acc)

    torch.manual_seed(SEED)
    cnn = nn.Sequential(
        nn.Conv2d(1, 4, 3, stride=2), nn.Conv2d(4, 4, 3, stride=2), nn.Flatten(), nn.Linear(144, 20), nn.ReLU(), nn.Linear(20, 10)
    )
    acc = train(cnn, x28[:n_train].reshape(-1, 1, 28, 28), y[:n_train], epochs=30)
    (out / "mnist_cnn").mkdir(parents=True, exist_ok=True)
    (out / "mnist_cnn" / "net.json").write_text(json.dumps(export(cnn, [1, 28, 28])) + "\n")
    save_dataset(out / "mnist_cnn" / "dataset", pick(cnn, x28[n_train:], y[n_train:], 4, (1, 28, 28)))
    print("mnist_cnn accuracy %.3f" % acc)


if __name__ == "__main__":
    main()
