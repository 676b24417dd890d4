"""Train the desk-scale fixture networks on the 8x8 digits set and export them.

Writes a JSON manifest plus shape-prefixed little-endian int32 blobs per
network, and CSV splits of the dataset (label, p0..p63 with grey levels 0..16).
"""

import argparse
import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split


class SignSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, 1.0, -1.0)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * (x.abs() <= 1).float()


def sign(x):
    return SignSTE.apply(x)


def round_ste(x):
    return x + (torch.round(x) - x).detach()


class Bnn(nn.Module):
    def __init__(self, sizes):
        super().__init__()
        self.fcs = nn.ModuleList(nn.Linear(a, b, bias=False) for a, b in zip(sizes, sizes[1:]))
        self.bns = nn.ModuleList(nn.BatchNorm1d(b) for b in sizes[1:-1])
        self.alpha = nn.Parameter(torch.tensor(0.1))
        self.bias = nn.Parameter(torch.zeros(sizes[-1]))

    def forward(self, x):
        for k, fc in enumerate(self.fcs):
            y = F.linear(x, sign(fc.weight))
            if k < len(self.bns):
                x = sign(self.bns[k](y))
            else:
                return self.alpha.abs() * y + self.bias


def quant_w4(w):
    s = w.abs().max().detach() / 7.0
    return torch.clamp(round_ste(w / s), -8, 7), s


class Int4(nn.Module):
    def __init__(self, sizes):
        super().__init__()
        self.fcs = nn.ModuleList(nn.Linear(a, b) for a, b in zip(sizes, sizes[1:]))
        self.clip = nn.Parameter(torch.full((len(sizes) - 2,), 6.0))

    def forward(self, x):
        # x holds 4-bit input codes; act_scale maps codes to real values
        act_scale = torch.tensor(1.0)
        for k, fc in enumerate(self.fcs):
            wq, s = quant_w4(fc.weight)
            z = F.linear(x, wq) * s * act_scale + fc.bias
            if k == len(self.fcs) - 1:
                return z
            a = self.clip[k].abs()
            x = torch.clamp(round_ste(z * 15.0 / a), 0, 15)
            act_scale = a / 15.0


def encode_bin(p):
    return np.where(p >= 8, 1, -1)


def encode_u4(p):
    return np.minimum((15 * p.astype(np.int64) + 8) // 16, 15)


def train(model, x, y, epochs, lr, seed):
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, epochs)
    xt = torch.tensor(x, dtype=torch.float32)
    yt = torch.tensor(y)
    for _ in range(epochs):
        model.train()
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), 64):
            idx = perm[i : i + 64]
            loss = F.cross_entropy(model(xt[idx]), yt[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
    model.eval()
    return model


def export_bnn(model):
    layers = []
    n = len(model.fcs)
    for k, fc in enumerate(model.fcs):
        w = torch.where(fc.weight >= 0, 1, -1).detach().numpy().T.astype(np.int64)
        if k < n - 1:
            bn = model.bns[k]
            s = torch.sqrt(bn.running_var + bn.eps).detach().numpy()
            g = bn.weight.detach().numpy()
            b = bn.bias.detach().numpy()
            mu = bn.running_mean.detach().numpy()
            t = mu - b * s / np.where(g == 0, 1e-12, g)
            flip = g < 0
            w[:, flip] *= -1
            bias = np.where(flip, -np.ceil(-t), -np.ceil(t)).astype(np.int64)
            act = {"kind": "sign"}
        else:
            a = model.alpha.abs().item()
            bias = np.round(model.bias.detach().numpy() / a).astype(np.int64)
            act = {"kind": "identity"}
        layers.append(("binary", w, bias, act))
    return {"kind": "binarize", "threshold": 8}, layers


def export_int4(model, shift=16):
    layers = []
    n = len(model.fcs)
    act_scale = 1.0
    for k, fc in enumerate(model.fcs):
        wq, s = quant_w4(fc.weight)
        w = wq.detach().numpy().T.astype(np.int64)
        unit = s.item() * act_scale
        bias = np.round(fc.bias.detach().numpy() / unit).astype(np.int64)
        if k < n - 1:
            a = model.clip[k].abs().item()
            mult = int(round(unit * 15.0 / a * (1 << shift)))
            act = {"kind": "relu4", "mult": mult, "shift": shift}
            act_scale = a / 15.0
        else:
            act = {"kind": "identity"}
        layers.append(("int4", w, bias, act))
    return {"kind": "uniform4", "max": 16}, layers


def int_forward(enc, layers, p):
    x = encode_bin(p) if enc["kind"] == "binarize" else encode_u4(p)
    for prec, w, b, act in layers:
        y = x @ w + b
        if act["kind"] == "sign":
            x = np.where(y >= 0, 1, -1)
        elif act["kind"] == "relu4":
            m, sh = act["mult"], act["shift"]
            x = np.clip((y * m + (1 << (sh - 1))) >> sh, 0, 15)
        else:
            return y
    return y


def write_blob(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<i4")
    with open(path, "wb") as f:
        f.write(np.array([arr.ndim, *arr.shape], dtype="<u4").tobytes())
        f.write(arr.tobytes())


def write_net(out, name, enc, layers):
    entries = []
    for k, (prec, w, b, act) in enumerate(layers):
        wf, bf = f"{name}_w{k}.bin", f"{name}_b{k}.bin"
        write_blob(out / wf, w)
        write_blob(out / bf, b)
        entries.append({"type": "dense", "precision": prec, "activation": act, "weights": wf, "bias": bf})
    manifest = {"name": name, "input": enc, "layers": entries}
    (out / f"{name}.json").write_text(json.dumps(manifest, indent=2) + "\n")


def write_csv(path, p, y):
    with open(path, "w") as f:
        f.write("label," + ",".join(f"p{i}" for i in range(64)) + "\n")
        for row, label in zip(p, y):
            f.write(f"{label}," + ",".join(str(int(v)) for v in row) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "fixtures")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=80)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    d = load_digits()
    p = d.data.astype(np.int64)
    p_tr, p_te, y_tr, y_te = train_test_split(p, d.target, test_size=0.2, random_state=args.seed, stratify=d.target)

    torch.manual_seed(args.seed)
    bnn = train(Bnn([64, 128, 128, 10]), encode_bin(p_tr), y_tr, args.epochs, 1e-2, args.seed)
    enc, layers = export_bnn(bnn)
    acc = (int_forward(enc, layers, p_te).argmax(1) == y_te).mean()
    print(f"bnn integer test accuracy {acc:.4f}")
    write_net(args.out, "bnn_digits", enc, layers)

    torch.manual_seed(args.seed)
    q = train(Int4([64, 64, 10]), encode_u4(p_tr), y_tr, args.epochs, 3e-3, args.seed)
    enc, layers = export_int4(q)
    acc = (int_forward(enc, layers, p_te).argmax(1) == y_te).mean()
    print(f"int4 integer test accuracy {acc:.4f}")
    write_net(args.out, "int4_digits", enc, layers)

    write_csv(args.out / "digits_test.csv", p_te, y_te)
    write_csv(args.out / "digits_calib.csv", p_tr[:32], y_tr[:32])


if __name__ == "__main__":
    main()
