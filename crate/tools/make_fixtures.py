#!/usr/bin/env python3
"""Generates the desk-scale fixtures checked into fixtures/.

Everything is seeded and self-contained:

  lenet/     a 7-node LeNet-style net trained on a procedurally generated
             MNIST-format digit dataset, plus the 1000-image test split as
             IDX files. Regenerating retrains the network, so the frozen
             golden values under lenet/ must be refreshed afterwards (see
             README).
  stack20/   20 conv+relu+bn blocks with He-scaled random weights and
             identity BN statistics, plus sample inputs. Used for the
             mean-error accumulation / BN-adjustment experiments.
  convpair/  a conventional 64-channel conv and a depthwise twin over shared
             inputs, for the channel-variance comparison.
  residual/  a small two-branch residual block ending in a classifier.

Run from the repository root:  python3 tools/make_fixtures.py
"""

import json
import struct
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

GLYPHS = {
    0: ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    3: ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    4: ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    6: ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    8: ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}


def render_digit(rng, digit):
    glyph = np.array([[int(c) for c in row] for row in GLYPHS[digit]], dtype=np.float32)
    scaled = np.kron(glyph, np.ones((3, 3), dtype=np.float32))  # 21 x 15
    # Random pixel dropout thins the strokes.
    dropout = rng.random(scaled.shape) < 0.08
    scaled[dropout] = 0.0
    canvas = np.zeros((28, 28), dtype=np.float32)
    oy = rng.integers(1, 7)
    ox = rng.integers(3, 11)
    intensity = rng.uniform(0.45, 1.0) * 255.0
    canvas[oy : oy + 21, ox : ox + 15] = scaled * intensity
    # Occasional bright occlusion square.
    if rng.random() < 0.3:
        sy = rng.integers(0, 24)
        sx = rng.integers(0, 24)
        canvas[sy : sy + 4, sx : sx + 4] = rng.uniform(0.3, 0.9) * 255.0
    canvas += rng.normal(0.0, 28.0, size=canvas.shape)
    return np.clip(canvas, 0, 255).astype(np.uint8)


def make_digit_dataset(rng, count):
    images = np.zeros((count, 28, 28), dtype=np.uint8)
    labels = np.zeros(count, dtype=np.uint8)
    for i in range(count):
        d = int(rng.integers(0, 10))
        images[i] = render_digit(rng, d)
        labels[i] = d
    return images, labels


def write_idx_images(path, images):
    with open(path, "wb") as f:
        n, h, w = images.shape
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())


def write_axt(path, tensors):
    """tensors: float32 array of shape (count, c, h, w)."""
    count, c, h, w = tensors.shape
    with open(path, "wb") as f:
        f.write(b"AXT1")
        f.write(struct.pack("<IIII", count, c, h, w))
        f.write(tensors.astype("<f4").tobytes())


class Blob:
    """Accumulates float32 arrays into one little-endian blob file."""

    def __init__(self, file_name):
        self.file_name = file_name
        self.chunks = []
        self.offset = 0

    def push(self, array):
        data = np.ascontiguousarray(array, dtype="<f4")
        ref = {"file": self.file_name, "offset": self.offset, "count": int(data.size)}
        self.chunks.append(data.tobytes())
        self.offset += data.size * 4
        return ref

    def write(self, directory):
        with open(directory / self.file_name, "wb") as f:
            for chunk in self.chunks:
                f.write(chunk)


def save_manifest(directory, doc):
    directory.mkdir(parents=True, exist_ok=True)
    name = doc.get("_file", "manifest.json")
    doc = {k: v for k, v in doc.items() if not k.startswith("_")}
    with open(directory / name, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


# --------------------------------------------------------------------------
# LeNet on the synthetic digit set
# --------------------------------------------------------------------------

def build_lenet():
    import torch
    import torch.nn as nn

    class LeNet(nn.Module):
        def __init__(self):
            super().__init__()
            self.conv1 = nn.Conv2d(1, 8, 5, padding=2)
            self.conv2 = nn.Conv2d(8, 16, 5, padding=2)
            self.fc = nn.Linear(16 * 7 * 7, 10)
            self.pool = nn.MaxPool2d(2, 2)
            self.relu = nn.ReLU()

        def forward(self, x):
            x = self.pool(self.relu(self.conv1(x)))
            x = self.pool(self.relu(self.conv2(x)))
            return self.fc(x.flatten(1))

    return LeNet()


def train_lenet(train_images, train_labels, test_images, test_labels):
    import torch
    import torch.nn as nn

    torch.manual_seed(0)
    model = build_lenet()
    xs = torch.from_numpy(train_images.astype(np.float32) / 255.0).unsqueeze(1)
    ys = torch.from_numpy(train_labels.astype(np.int64))
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    loss_fn = nn.CrossEntropyLoss()
    batch = 64
    for epoch in range(4):
        perm = torch.randperm(len(xs))
        total = 0.0
        for i in range(0, len(xs), batch):
            idx = perm[i : i + batch]
            opt.zero_grad()
            loss = loss_fn(model(xs[idx]), ys[idx])
            loss.backward()
            opt.step()
            total += float(loss)
        print(f"  epoch {epoch}: loss {total / (len(xs) / batch):.4f}")
    model.eval()
    with torch.no_grad():
        tx = torch.from_numpy(test_images.astype(np.float32) / 255.0).unsqueeze(1)
        pred = model(tx).argmax(dim=1).numpy()
    acc = float((pred == test_labels).mean())
    print(f"  float32 test accuracy: {acc:.4f}")
    return model


def export_lenet(model, directory):
    blob = Blob("weights.bin")
    p = {k: v.detach().numpy() for k, v in model.state_dict().items()}
    c1w = blob.push(p["conv1.weight"])
    c1b = blob.push(p["conv1.bias"])
    c2w = blob.push(p["conv2.weight"])
    c2b = blob.push(p["conv2.bias"])
    fcw = blob.push(p["fc.weight"])
    fcb = blob.push(p["fc.bias"])
    doc = {
        "version": "1",
        "name": "lenet",
        "input": {"edge": "image", "dims": [1, 28, 28]},
        "output": "logits",
        "nodes": [
            {
                "type": "conv", "name": "conv1", "input": "image", "output": "c1",
                "out_channels": 8, "in_channels": 1, "kernel": [5, 5],
                "stride": [1, 1], "padding": [2, 2], "groups": 1,
                "weights": c1w, "bias": c1b,
            },
            {"type": "relu", "name": "relu1", "input": "c1", "output": "r1"},
            {
                "type": "maxpool", "name": "pool1", "input": "r1", "output": "p1",
                "kernel": [2, 2], "stride": [2, 2],
            },
            {
                "type": "conv", "name": "conv2", "input": "p1", "output": "c2",
                "out_channels": 16, "in_channels": 8, "kernel": [5, 5],
                "stride": [1, 1], "padding": [2, 2], "groups": 1,
                "weights": c2w, "bias": c2b,
            },
            {"type": "relu", "name": "relu2", "input": "c2", "output": "r2"},
            {
                "type": "maxpool", "name": "pool2", "input": "r2", "output": "p2",
                "kernel": [2, 2], "stride": [2, 2],
            },
            {
                "type": "fc", "name": "fc", "input": "p2", "output": "logits",
                "in_features": 784, "out_features": 10,
                "weights": fcw, "bias": fcb,
            },
        ],
    }
    directory.mkdir(parents=True, exist_ok=True)
    blob.write(directory)
    save_manifest(directory, doc)


def make_lenet_fixture():
    print("lenet: generating digit dataset")
    rng = np.random.default_rng(2024)
    train_images, train_labels = make_digit_dataset(rng, 8000)
    test_images, test_labels = make_digit_dataset(rng, 1000)
    out = FIXTURES / "lenet"
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "t1k-images.idx", test_images)
    write_idx_labels(out / "t1k-labels.idx", test_labels)
    print("lenet: training")
    model = train_lenet(train_images, train_labels, test_images, test_labels)
    export_lenet(model, out)
    print(f"lenet: wrote {out}")


# --------------------------------------------------------------------------
# Synthetic conv stacks
# --------------------------------------------------------------------------

def conv2d_ref(x, w):
    """Plain float32 3x3 same-padding convolution, (c,h,w) x (o,c,3,3)."""
    c, h, wd = x.shape
    o = w.shape[0]
    padded = np.zeros((c, h + 2, wd + 2), dtype=np.float64)
    padded[:, 1 : h + 1, 1 : wd + 1] = x
    out = np.zeros((o, h, wd), dtype=np.float64)
    for oc in range(o):
        for ky in range(3):
            for kx in range(3):
                out[oc] += np.einsum(
                    "chw,c->hw", padded[:, ky : ky + h, kx : kx + wd], w[oc, :, ky, kx]
                )
    return out


def make_stack20():
    rng = np.random.default_rng(7)
    c, depth = 12, 20
    # Positive weights keep every product positive, so each output's
    # accumulated error is a clean weighted mean of per-product errors.
    # The log-normal tail makes a handful of taps dominate each output,
    # spreading activation magnitudes across octaves; that keeps every
    # layer's operand mantissas close to the uniform distribution the
    # multipliers are characterized on.
    weights = [
        np.exp(rng.normal(0.0, 1.0, size=(c, c, 3, 3))).astype(np.float64)
        for _ in range(depth)
    ]
    inputs = np.abs(rng.normal(0.0, 0.7, size=(4, c, 12, 12)))
    inputs *= np.exp2(rng.uniform(-1.0, 1.0, size=(4, c, 1, 1)))

    # Calibrate each layer's weight scale so the exact float pipeline keeps a
    # stable activation mean; conv output is linear in the weights.
    target = 0.5
    xs = [inputs[i].astype(np.float64) for i in range(inputs.shape[0])]
    for i in range(depth):
        outs = [conv2d_ref(x, weights[i]) for x in xs]
        mean = np.mean([o.mean() for o in outs])
        weights[i] *= target / mean
        xs = [o * (target / mean) for o in outs]  # relu/bn are identity here

    blob = Blob("weights.bin")
    zeros = blob.push(np.zeros(c))
    ones = blob.push(np.ones(c))
    nodes = []
    edge = "x"
    for i in range(1, depth + 1):
        w = blob.push(weights[i - 1])
        nodes.append({
            "type": "conv", "name": f"conv{i}", "input": edge, "output": f"c{i}",
            "out_channels": c, "in_channels": c, "kernel": [3, 3],
            "stride": [1, 1], "padding": [1, 1], "groups": 1, "weights": w,
        })
        nodes.append({"type": "relu", "name": f"relu{i}", "input": f"c{i}", "output": f"r{i}"})
        nodes.append({
            "type": "batchnorm", "name": f"bn{i}", "input": f"r{i}", "output": f"b{i}",
            "channels": c, "epsilon": 1e-5,
            "mean": zeros, "variance": ones, "gamma": ones, "beta": zeros,
        })
        edge = f"b{i}"
    doc = {
        "version": "1",
        "name": "stack20",
        "input": {"edge": "x", "dims": [c, 12, 12]},
        "output": edge,
        "nodes": nodes,
    }
    out = FIXTURES / "stack20"
    out.mkdir(parents=True, exist_ok=True)
    blob.write(out)
    save_manifest(out, doc)
    write_axt(out / "inputs.axt", inputs)
    print(f"stack20: wrote {out}")


def make_convpair():
    rng = np.random.default_rng(11)
    c = 64
    blob = Blob("weights.bin")
    # Positive weights and channel-correlated inputs mirror what makes
    # cross-channel accumulation matter in practice: input channels carry
    # scaled views of shared spatial structure, so a conventional conv's
    # 64-channel accumulation adds signal coherently while per-product error
    # stays incoherent. Depthwise gets no such averaging.
    conv_w = blob.push(np.exp(rng.normal(0.0, 1.0, size=(c, c, 3, 3))) / (9.0 * c))
    dw_w = blob.push(np.exp(rng.normal(0.0, 1.0, size=(c, 1, 3, 3))) / 9.0)
    out = FIXTURES / "convpair"
    out.mkdir(parents=True, exist_ok=True)
    blob.write(out)
    save_manifest(out, {
        "_file": "conventional.json",
        "version": "1",
        "name": "convpair-conventional",
        "input": {"edge": "x", "dims": [c, 12, 12]},
        "output": "y",
        "nodes": [{
            "type": "conv", "name": "conv", "input": "x", "output": "y",
            "out_channels": c, "in_channels": c, "kernel": [3, 3],
            "stride": [1, 1], "padding": [1, 1], "groups": 1, "weights": conv_w,
        }],
    })
    save_manifest(out, {
        "_file": "depthwise.json",
        "version": "1",
        "name": "convpair-depthwise",
        "input": {"edge": "x", "dims": [c, 12, 12]},
        "output": "y",
        "nodes": [{
            "type": "conv", "name": "conv", "input": "x", "output": "y",
            "out_channels": c, "in_channels": c, "kernel": [3, 3],
            "stride": [1, 1], "padding": [1, 1], "groups": c, "weights": dw_w,
        }],
    })
    # Shared smooth base pattern per sample, per-channel scale over a few
    # octaves, small independent per-channel detail.
    samples = []
    for _ in range(6):
        rough = rng.normal(0.0, 1.0, size=(14, 14))
        smooth = sum(
            rough[dy : dy + 12, dx : dx + 12] for dy in range(3) for dx in range(3)
        ) / 9.0
        base = 1.0 + 0.3 * smooth
        scales = np.exp2(rng.uniform(-1.5, 1.5, size=(c, 1, 1)))
        detail = 0.08 * np.abs(rng.normal(0.0, 1.0, size=(c, 12, 12)))
        samples.append(scales * np.clip(base[None, :, :] + detail, 0.05, None))
    write_axt(out / "inputs.axt", np.stack(samples))
    print(f"convpair: wrote {out}")


def make_residual():
    rng = np.random.default_rng(23)
    c = 8
    blob = Blob("weights.bin")
    sigma = np.sqrt(2.0 / (9 * c))

    def bn_refs():
        return {
            "mean": blob.push(rng.normal(0.0, 0.2, size=c)),
            "variance": blob.push(rng.uniform(0.6, 1.4, size=c)),
            "gamma": blob.push(rng.uniform(0.8, 1.2, size=c)),
            "beta": blob.push(rng.normal(0.0, 0.1, size=c)),
        }

    conv1_w = blob.push(rng.normal(0.0, sigma, size=(c, c, 3, 3)))
    conv1_b = blob.push(rng.normal(0.0, 0.05, size=c))
    bn1 = bn_refs()
    conv2_w = blob.push(rng.normal(0.0, sigma, size=(c, c, 3, 3)))
    conv2_b = blob.push(rng.normal(0.0, 0.05, size=c))
    bn2 = bn_refs()
    fc_w = blob.push(rng.normal(0.0, 0.4, size=(4, c)))
    fc_b = blob.push(rng.normal(0.0, 0.05, size=4))

    doc = {
        "version": "1",
        "name": "residual",
        "input": {"edge": "x", "dims": [c, 8, 8]},
        "output": "logits",
        "nodes": [
            {
                "type": "conv", "name": "conv1", "input": "x", "output": "c1",
                "out_channels": c, "in_channels": c, "kernel": [3, 3],
                "stride": [1, 1], "padding": [1, 1], "groups": 1,
                "weights": conv1_w, "bias": conv1_b,
            },
            {"type": "batchnorm", "name": "bn1", "input": "c1", "output": "n1",
             "channels": c, "epsilon": 1e-5, **bn1},
            {"type": "relu", "name": "relu1", "input": "n1", "output": "r1"},
            {
                "type": "conv", "name": "conv2", "input": "r1", "output": "c2",
                "out_channels": c, "in_channels": c, "kernel": [3, 3],
                "stride": [1, 1], "padding": [1, 1], "groups": 1,
                "weights": conv2_w, "bias": conv2_b,
            },
            {"type": "batchnorm", "name": "bn2", "input": "c2", "output": "n2",
             "channels": c, "epsilon": 1e-5, **bn2},
            {"type": "add", "name": "skip", "inputs": ["n2", "x"], "output": "s"},
            {"type": "relu", "name": "relu2", "input": "s", "output": "r2"},
            {"type": "avgpool", "name": "gap", "input": "r2", "output": "g",
             "kernel": [8, 8], "stride": [8, 8]},
            {"type": "flatten", "name": "flat", "input": "g", "output": "f"},
            {"type": "fc", "name": "fc", "input": "f", "output": "logits",
             "in_features": c, "out_features": 4, "weights": fc_w, "bias": fc_b},
        ],
    }
    out = FIXTURES / "residual"
    out.mkdir(parents=True, exist_ok=True)
    blob.write(out)
    save_manifest(out, doc)
    print(f"residual: wrote {out}")


if __name__ == "__main__":
    make_stack20()
    make_convpair()
    make_residual()
    make_lenet_fixture()
    print("done")
