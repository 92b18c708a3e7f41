"""The toy convolutional classifier: definition, training, serialization, probing.

A network is an ordered list of layers (conv / relu / lrn / pool / flatten /
affine / softmax) over (C, H, W) float64 images. A handful of named "report
layers" mark the activation snapshots used by the downstream similarity and
encoding analyses; snapshots are taken after the layer's nonlinearity and
pooling, which is recorded in checkpoint metadata so the choice is auditable.

Checkpoint format: 8-byte magic ``ADVRSA01``, a little-endian u32 byte length,
a UTF-8 JSON header (config + training metadata + tensor manifest), then the
raw little-endian float64 parameter tensors in declaration order.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor_ops as T

CHECKPOINT_MAGIC = b"ADVRSA01"
CHECKPOINT_FORMAT = 1

_PARAMETRIC = {"conv", "affine"}


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a kind tag plus its hyperparameters (no learned state)."""

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def conv(cls, out_channels, kernel, stride=1, padding=0):
        return cls("conv", {"out_channels": out_channels, "kernel": kernel,
                            "stride": stride, "padding": padding})

    @classmethod
    def relu(cls):
        return cls("relu")

    @classmethod
    def lrn(cls, k=2.0, alpha=1e-4, beta=0.75, n=5):
        return cls("lrn", {"k": k, "alpha": alpha, "beta": beta, "n": n})

    @classmethod
    def pool(cls, window, stride=None):
        return cls("pool", {"window": window,
                            "stride": window if stride is None else stride})

    @classmethod
    def flatten(cls):
        return cls("flatten")

    @classmethod
    def affine(cls, out_dim):
        return cls("affine", {"out_dim": out_dim})

    @classmethod
    def softmax(cls):
        return cls("softmax")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture: ordered layers, input shape, class count, report layers.

    ``report_layers`` maps a snapshot name (e.g. "L1") to the index of the
    layer whose *output* is snapshotted; the mapping is kept in definition
    order, which is the depth order used by trend analyses.
    """

    layers: tuple
    input_shape: tuple = (3, 32, 32)
    num_classes: int = 8
    report_layers: tuple = ()  # ((name, layer_index), ...)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "report_layers",
                           tuple((str(n), int(i)) for n, i in self.report_layers))
        self.shape_chain()  # validates the layer chain
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ValueError("final layer must be softmax")
        names = [n for n, _ in self.report_layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate report layer names: {names}")
        for name, idx in self.report_layers:
            if not 0 <= idx < len(self.layers):
                raise ValueError(f"report layer {name!r} points at layer {idx}, "
                                 f"but the network has {len(self.layers)} layers")

    def shape_chain(self):
        """Output shape after every layer; raises if the chain is inconsistent."""
        shape = self.input_shape
        chain = []
        for i, spec in enumerate(self.layers):
            kind, p = spec.kind, spec.params
            if kind == "conv":
                if not isinstance(shape, tuple) or len(shape) != 3:
                    raise ValueError(f"layer {i} (conv) needs a (C,H,W) input, has {shape}")
                c, h, w = shape
                kk, s, pad = p["kernel"], p["stride"], p["padding"]
                h2 = (h + 2 * pad - kk) // s + 1
                w2 = (w + 2 * pad - kk) // s + 1
                if h2 < 1 or w2 < 1:
                    raise ValueError(f"layer {i} (conv) does not fit input {shape}")
                shape = (p["out_channels"], h2, w2)
            elif kind == "pool":
                c, h, w = shape
                win, s = p["window"], p["stride"]
                if win > h or win > w:
                    raise ValueError(f"layer {i} (pool) window {win} exceeds {shape}")
                shape = (c, (h - win) // s + 1, (w - win) // s + 1)
            elif kind in ("relu", "lrn"):
                pass
            elif kind == "flatten":
                if not isinstance(shape, tuple):
                    raise ValueError(f"layer {i} (flatten) input already flat")
                shape = int(np.prod(shape))
            elif kind == "affine":
                if isinstance(shape, tuple):
                    raise ValueError(f"layer {i} (affine) needs a flat input, has {shape}; "
                                     f"insert a flatten layer")
                shape = p["out_dim"]
            elif kind == "softmax":
                if isinstance(shape, tuple) or shape != self.num_classes:
                    raise ValueError(f"softmax input must be {self.num_classes} logits, "
                                     f"layer {i} sees {shape}")
            else:
                raise ValueError(f"unknown layer kind {kind!r} at layer {i}")
            chain.append(shape)
        return chain

    def report_sizes(self):
        """Flat activation length per report layer, in definition order."""
        chain = self.shape_chain()
        out = {}
        for name, idx in self.report_layers:
            s = chain[idx]
            out[name] = int(np.prod(s)) if isinstance(s, tuple) else int(s)
        return out

    def to_jsonable(self):
        return {
            "layers": [{"kind": s.kind, "params": s.params} for s in self.layers],
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "report_layers": [[n, i] for n, i in self.report_layers],
        }

    @classmethod
    def from_jsonable(cls, data):
        layers = tuple(LayerSpec(d["kind"], dict(d["params"])) for d in data["layers"])
        return cls(layers=layers,
                   input_shape=tuple(data["input_shape"]),
                   num_classes=data["num_classes"],
                   report_layers=tuple((n, i) for n, i in data["report_layers"]))


def toy_config(num_classes=8, input_shape=(3, 32, 32)):
    """The default small architecture: three conv stages, one hidden FC, softmax head.

    Report layers: L1 = post-pool conv1, L2 = post-pool conv2, L3 = conv3
    (post-ReLU), L4 = fc1 (post-ReLU), L5 = softmax.
    """
    layers = (
        LayerSpec.conv(16, 5, stride=1, padding=2),   # 0
        LayerSpec.relu(),                             # 1
        LayerSpec.lrn(),                              # 2
        LayerSpec.pool(2),                            # 3  <- L1
        LayerSpec.conv(32, 3, stride=1, padding=1),   # 4
        LayerSpec.relu(),                             # 5
        LayerSpec.lrn(),                              # 6
        LayerSpec.pool(2),                            # 7  <- L2
        LayerSpec.conv(32, 3, stride=1, padding=1),   # 8
        LayerSpec.relu(),                             # 9  <- L3
        LayerSpec.flatten(),                          # 10
        LayerSpec.affine(128),                        # 11
        LayerSpec.relu(),                             # 12 <- L4
        LayerSpec.affine(num_classes),                # 13
        LayerSpec.softmax(),                          # 14
    )
    report = (("L1", 3), ("L2", 7), ("L3", 9), ("L4", 12), ("L5", 14))
    return NetworkConfig(layers=layers, input_shape=input_shape,
                         num_classes=num_classes, report_layers=report)


class Network:
    """A concrete network: a NetworkConfig plus its parameter tensors.

    ``params`` is a list aligned with ``config.layers``; parametric layers
    hold {"kernels"|"weights": ..., "bias": ...}, the rest hold None.
    """

    def __init__(self, config, params, metadata=None):
        self.config = config
        self.params = params
        self.metadata = dict(metadata or {})
        self._validate_params()

    def _validate_params(self):
        chain = self.config.shape_chain()
        shape = self.config.input_shape
        for i, (spec, p) in enumerate(zip(self.config.layers, self.params)):
            if spec.kind == "conv":
                want_k = (spec.params["out_channels"], shape[0],
                          spec.params["kernel"], spec.params["kernel"])
                if p["kernels"].shape != want_k or p["bias"].shape != (want_k[0],):
                    raise ValueError(f"layer {i} parameter shapes {p['kernels'].shape}, "
                                     f"{p['bias'].shape} do not match config {want_k}")
            elif spec.kind == "affine":
                want_w = (spec.params["out_dim"], shape)
                if p["weights"].shape != want_w or p["bias"].shape != (want_w[0],):
                    raise ValueError(f"layer {i} parameter shapes {p['weights'].shape}, "
                                     f"{p['bias'].shape} do not match config {want_w}")
            elif p is not None:
                raise ValueError(f"layer {i} ({spec.kind}) takes no parameters")
            shape = chain[i]

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    @classmethod
    def init(cls, config, seed):
        """He-style fan-in-scaled Gaussian init, zero biases, deterministic per seed."""
        chain = config.shape_chain()
        shape = config.input_shape
        params = []
        for i, spec in enumerate(config.layers):
            if spec.kind == "conv":
                rng = np.random.default_rng([seed, i])
                c_out, k = spec.params["out_channels"], spec.params["kernel"]
                fan_in = shape[0] * k * k
                kernels = rng.standard_normal((c_out, shape[0], k, k)) * np.sqrt(2.0 / fan_in)
                params.append({"kernels": kernels, "bias": np.zeros(c_out)})
            elif spec.kind == "affine":
                rng = np.random.default_rng([seed, i])
                m = spec.params["out_dim"]
                # the classifier head gets a deliberately small scale so an
                # untrained network outputs near-uniform probabilities
                scale = 0.1 / np.sqrt(shape) if i == len(config.layers) - 2 else np.sqrt(2.0 / shape)
                weights = rng.standard_normal((m, shape)) * scale
                params.append({"weights": weights, "bias": np.zeros(m)})
            else:
                params.append(None)
            shape = chain[i]
        return cls(config, params, metadata={"seed": seed, "epochs": 0,
                                             "final_val_accuracy": None,
                                             "activation_stage": "post-nonlinearity, post-pool"})

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------

    def forward(self, image):
        """Full forward pass; returns (probs, cache) where cache holds what the
        backward pass needs (layer inputs, pool argmaxes, softmax probs)."""
        x = np.asarray(image, dtype=np.float64)
        if x.shape != self.config.input_shape:
            raise ValueError(f"image shape {x.shape} does not match "
                             f"network input {self.config.input_shape}")
        cache = []
        for spec, p in zip(self.config.layers, self.params):
            kind = spec.kind
            if kind == "conv":
                cache.append(("conv", x, None))
                x = T.conv2d(x, p["kernels"], p["bias"],
                             stride=spec.params["stride"], padding=spec.params["padding"])
            elif kind == "relu":
                cache.append(("relu", x, None))
                x = T.relu(x)
            elif kind == "lrn":
                cache.append(("lrn", x, None))
                x = T.lrn(x, **spec.params)
            elif kind == "pool":
                out, argmax = T.maxpool2d(x, spec.params["window"], spec.params["stride"])
                cache.append(("pool", x.shape, argmax))
                x = out
            elif kind == "flatten":
                cache.append(("flatten", x.shape, None))
                x = x.reshape(-1)
            elif kind == "affine":
                cache.append(("affine", x, None))
                x = T.affine(x, p["weights"], p["bias"])
            else:  # softmax
                logits = x
                x = T.softmax(x)
                cache.append(("softmax", logits, x))
        return x, cache

    def backward(self, cache, grad_logits, need_param_grads=True):
        """Backpropagate a gradient w.r.t. the logits (softmax input).

        Returns (grad_image, param_grads); param_grads is a params-aligned
        list (None where there is nothing to learn) or None when skipped.
        """
        assert cache[-1][0] == "softmax"
        g = np.asarray(grad_logits, dtype=np.float64)
        param_grads = [None] * len(self.params) if need_param_grads else None
        for i in range(len(self.config.layers) - 2, -1, -1):
            spec, p = self.config.layers[i], self.params[i]
            kind, saved, extra = cache[i]
            if kind == "conv":
                gx, gk, gb = T.conv2d_backward(saved, p["kernels"], g,
                                               stride=spec.params["stride"],
                                               padding=spec.params["padding"])
                if need_param_grads:
                    param_grads[i] = {"kernels": gk, "bias": gb}
                g = gx
            elif kind == "relu":
                g = T.relu_backward(saved, g)
            elif kind == "lrn":
                g = T.lrn_backward(saved, g, **spec.params)
            elif kind == "pool":
                g = T.maxpool2d_backward(g, extra, saved)
            elif kind == "flatten":
                g = g.reshape(saved)
            elif kind == "affine":
                gx, gw, gb = T.affine_backward(saved, p["weights"], g)
                if need_param_grads:
                    param_grads[i] = {"weights": gw, "bias": gb}
                g = gx
        return g, param_grads

    def predict(self, image):
        """Class probability vector for one image."""
        probs, _ = self.forward(image)
        return probs

    def loss_and_grads(self, image, label):
        """(loss, probs, grad_image, param_grads) for cross-entropy at one image."""
        probs, cache = self.forward(image)
        logits = cache[-1][1]
        _, loss = T.softmax_xent(logits, label)  # logsumexp form: finite for extreme logits
        grad_logits = T.softmax_xent_backward(probs, label)
        grad_image, param_grads = self.backward(cache, grad_logits, need_param_grads=True)
        return loss, probs, grad_image, param_grads

    def logprob_grad(self, image, target):
        """(log p_target, probs, d log p_target / d image) for a frozen network."""
        probs, cache = self.forward(image)
        grad_logits = -probs.copy()
        grad_logits[target] += 1.0  # d log p_t / d logits = onehot(t) - p
        grad_image, _ = self.backward(cache, grad_logits, need_param_grads=False)
        logp = float(np.log(probs[target])) if probs[target] > 0 else -float("inf")
        return logp, probs, grad_image

    def layer_activations(self, image, layer_id):
        """Flat (row-major) activation snapshot at one named report layer."""
        acts = self.report_activations(image)
        if layer_id not in acts:
            known = [n for n, _ in self.config.report_layers]
            raise KeyError(f"unknown report layer {layer_id!r}; known: {known}")
        return acts[layer_id]

    def report_activations(self, image):
        """All report-layer snapshots from a single forward pass: {name: flat vector}."""
        x = np.asarray(image, dtype=np.float64)
        if x.shape != self.config.input_shape:
            raise ValueError(f"image shape {x.shape} does not match "
                             f"network input {self.config.input_shape}")
        wanted = {idx: name for name, idx in self.config.report_layers}
        out = {}
        for i, (spec, p) in enumerate(zip(self.config.layers, self.params)):
            kind = spec.kind
            if kind == "conv":
                x = T.conv2d(x, p["kernels"], p["bias"],
                             stride=spec.params["stride"], padding=spec.params["padding"])
            elif kind == "relu":
                x = T.relu(x)
            elif kind == "lrn":
                x = T.lrn(x, **spec.params)
            elif kind == "pool":
                x, _ = T.maxpool2d(x, spec.params["window"], spec.params["stride"])
            elif kind == "flatten":
                x = x.reshape(-1)
            elif kind == "affine":
                x = T.affine(x, p["weights"], p["bias"])
            else:
                x = T.softmax(x)
            if i in wanted:
                out[wanted[i]] = np.asarray(x, dtype=np.float64).reshape(-1).copy()
        return out

    # ------------------------------------------------------------------
    # training
    # ------------------------------------------------------------------

    def train(self, train_set, val_set, epochs, learning_rate, batch_size, seed,
              momentum=0.9, log=None):
        """SGD with momentum on cross-entropy. Mutates this network's parameters.

        ``train_set`` / ``val_set`` are any objects with ``.images`` (N,C,H,W)
        and ``.labels`` (N,) attributes. ``learning_rate`` is a float or a
        per-epoch sequence. Shuffling is driven by (seed, epoch), so a run is
        bitwise reproducible. Returns the per-epoch history.
        """
        images, labels = train_set.images, train_set.labels
        n = len(labels)
        if n == 0:
            raise ValueError("empty training set")
        c = self.config.num_classes
        if labels.min() < 0 or labels.max() >= c:
            raise ValueError(f"labels must lie in [0, {c}), got range "
                             f"[{labels.min()}, {labels.max()}]")
        if np.isscalar(learning_rate):
            rates = [float(learning_rate)] * epochs
        else:
            rates = [float(r) for r in learning_rate]
            if len(rates) != epochs:
                raise ValueError(f"learning-rate schedule has {len(rates)} entries "
                                 f"for {epochs} epochs")

        velocity = [None if p is None else {k: np.zeros_like(v) for k, v in p.items()}
                    for p in self.params]
        history = []
        for epoch in range(epochs):
            lr = rates[epoch]
            order = np.random.default_rng([seed, epoch]).permutation(n)
            epoch_loss, epoch_correct = 0.0, 0
            for start in range(0, n, batch_size):
                batch = order[start:start + batch_size]
                grads = [None if p is None else {k: np.zeros_like(v) for k, v in p.items()}
                         for p in self.params]
                batch_loss = 0.0
                for idx in batch:
                    label = int(labels[idx])
                    loss, probs, _, g = self.loss_and_grads(images[idx], label)
                    batch_loss += loss
                    epoch_correct += int(np.argmax(probs) == label)
                    for gi, gp in enumerate(g):
                        if gp is not None:
                            for k in gp:
                                grads[gi][k] += gp[k]
                if not np.isfinite(batch_loss):
                    raise ValueError(
                        f"training diverged: loss became non-finite at epoch {epoch}, "
                        f"batch starting at {start}; try a smaller learning rate")
                epoch_loss += batch_loss
                scale = 1.0 / len(batch)
                for pi, p in enumerate(self.params):
                    if p is None:
                        continue
                    for k in p:
                        velocity[pi][k] = momentum * velocity[pi][k] - lr * grads[pi][k] * scale
                        p[k] += velocity[pi][k]
            val_loss, val_acc = self.evaluate(val_set)
            train_loss, train_acc = epoch_loss / n, epoch_correct / n
            history.append({"epoch": epoch, "lr": lr,
                            "train_loss": train_loss, "train_acc": train_acc,
                            "val_loss": val_loss, "val_acc": val_acc})
            if log is not None:
                log(f"epoch {epoch:3d}  lr {lr:.4g}  train loss {train_loss:.4f}  "
                    f"val loss {val_loss:.4f}  val acc {val_acc:.3f}")
        self.metadata["epochs"] = self.metadata.get("epochs", 0) + epochs
        if history:
            self.metadata["final_val_accuracy"] = history[-1]["val_acc"]
        return history

    def evaluate(self, dataset):
        """(mean cross-entropy, accuracy) over a labeled set."""
        total_loss, correct = 0.0, 0
        n = len(dataset.labels)
        for i in range(n):
            probs = self.predict(dataset.images[i])
            label = int(dataset.labels[i])
            p = probs[label]
            total_loss += -np.log(p) if p > 0 else np.inf
            correct += int(np.argmax(probs) == label)
        return float(total_loss / n), correct / n

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def _tensor_manifest(self):
        manifest = []
        for i, p in enumerate(self.params):
            if p is None:
                continue
            for name in sorted(p):
                manifest.append({"layer": i, "name": name, "shape": list(p[name].shape)})
        return manifest

    def save(self, path):
        """Write the ADVRSA01 checkpoint. Byte-identical for identical state."""
        header = {
            "format": CHECKPOINT_FORMAT,
            "config": self.config.to_jsonable(),
            "metadata": self.metadata,
            "tensors": self._tensor_manifest(),
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for entry in header["tensors"]:
                tensor = self.params[entry["layer"]][entry["name"]]
                fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic at byte 0: expected {CHECKPOINT_MAGIC!r}, "
                             f"found {data[:8]!r}")
        if len(data) < 12:
            raise ValueError(f"{path}: truncated at byte {len(data)}: header length missing")
        (header_len,) = struct.unpack("<I", data[8:12])
        if len(data) < 12 + header_len:
            raise ValueError(f"{path}: truncated at byte {len(data)}: "
                             f"header claims {header_len} bytes ending at {12 + header_len}")
        try:
            header = json.loads(data[12:12 + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: corrupt JSON header in bytes 12..{12 + header_len}: {exc}")
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}; "
                             f"this build reads format {CHECKPOINT_FORMAT}")
        config = NetworkConfig.from_jsonable(header["config"])
        params = [None] * len(config.layers)
        offset = 12 + header_len
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            nbytes = int(np.prod(shape)) * 8
            if offset + nbytes > len(data):
                raise ValueError(
                    f"{path}: truncated at byte {len(data)} while reading tensor "
                    f"layer={entry['layer']} name={entry['name']!r} "
                    f"(bytes {offset}..{offset + nbytes})")
            tensor = np.frombuffer(data[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
            offset += nbytes
            slot = params[entry["layer"]]
            if slot is None:
                slot = params[entry["layer"]] = {}
            slot[entry["name"]] = tensor
        if offset != len(data):
            raise ValueError(f"{path}: {len(data) - offset} unexpected trailing bytes "
                             f"at byte {offset}")
        return cls(config, params, metadata=header.get("metadata", {}))


# ----------------------------------------------------------------------
# gradient verification
# ----------------------------------------------------------------------

def gradient_check(network, image, label, n_coords=200, seed=0, h=1e-5):
    """Compare analytic loss gradients against central finite differences.

    Samples coordinates uniformly across the input image and every parameter
    tensor. Coordinates where the ±h perturbation flips a ReLU sign or a pool
    argmax (a kink crossing, where the loss is not differentiable) are skipped
    and resampled. Relative error uses a 1e-5 denominator floor so that the
    ~1e-10 absolute noise of the difference quotient cannot masquerade as a
    large relative error on near-zero gradients.

    Returns {"max_rel_err", "n_checked", "n_skipped"}.
    """
    image = np.asarray(image, dtype=np.float64)
    _, _, grad_image, param_grads = network.loss_and_grads(image, label)

    # addressable coordinate space: ("image", flat_idx) or (layer, name, flat_idx)
    spaces = [("image", None, image.size)]
    for i, p in enumerate(network.params):
        if p is None:
            continue
        for name in sorted(p):
            spaces.append((i, name, p[name].size))
    sizes = np.array([s[2] for s in spaces], dtype=np.float64)

    def fingerprint(cache):
        parts = []
        for entry, spec in zip(cache, network.config.layers):
            if spec.kind == "relu":
                parts.append((entry[1] > 0).tobytes())
            elif spec.kind == "pool":
                parts.append(entry[2].tobytes())
        return b"".join(parts)

    def loss_and_fingerprint():
        _, cache = network.forward(image)
        _, loss = T.softmax_xent(cache[-1][1], label)
        return loss, fingerprint(cache)

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    checked = skipped = 0
    attempts = 0
    while checked < n_coords:
        attempts += 1
        if attempts > 50 * n_coords:
            raise RuntimeError("gradient check cannot find enough kink-free coordinates")
        space = spaces[rng.choice(len(spaces), p=sizes / sizes.sum())]
        flat_idx = int(rng.integers(space[2]))
        if space[0] == "image":
            target = image.reshape(-1)
            analytic = grad_image.reshape(-1)[flat_idx]
        else:
            target = network.params[space[0]][space[1]].reshape(-1)
            analytic = param_grads[space[0]][space[1]].reshape(-1)[flat_idx]
        orig = target[flat_idx]
        target[flat_idx] = orig + h
        hi, fp_hi = loss_and_fingerprint()
        target[flat_idx] = orig - h
        lo, fp_lo = loss_and_fingerprint()
        target[flat_idx] = orig
        if fp_hi != fp_lo:
            skipped += 1
            continue
        fd = (hi - lo) / (2 * h)
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-5)
        max_rel = max(max_rel, rel)
        checked += 1
    return {"max_rel_err": max_rel, "n_checked": checked, "n_skipped": skipped}
