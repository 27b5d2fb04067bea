"""View-collaborative graph network for 3D landmark refinement.

Per view, node features run through a small GCN stack; the three views are
averaged into a 44-node global graph, strengthened, and fused back into
each view through softmax attention with a residual (the global-to-local
step).  Stacked blocks feed a final global stack and a 3-channel head that
decodes per-landmark displacements added onto the initial 3D landmarks.

Everything runs in float64 so analytic gradients can be checked against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

PARAMS_MAGIC = "carimesh-vcgcn-params 1"


def normalize_adjacency(A):
    """Symmetric degree normalization D^-1/2 A D^-1/2.

    A must be symmetric 0/1 with unit diagonal (self-loops), so no node has
    degree zero.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    if np.abs(A - A.T).max() > 0 or np.any(np.diag(A) != 1.0):
        raise ValueError("adjacency must be symmetric with self-loops")
    deg = A.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("isolated node without self-loop")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return A * inv_sqrt[:, None] * inv_sqrt[None, :]


def gcn_layer(F, A_hat, W, activation="leaky"):
    """One graph-convolution layer: activation(A_hat @ F @ W)."""
    torch_in = isinstance(F, torch.Tensor)
    F_t = F if torch_in else torch.from_numpy(np.asarray(F, dtype=np.float64))
    A_t = A_hat if isinstance(A_hat, torch.Tensor) else torch.from_numpy(
        np.asarray(A_hat, dtype=np.float64))
    W_t = W if isinstance(W, torch.Tensor) else torch.from_numpy(
        np.asarray(W, dtype=np.float64))
    if F_t.shape[1] != W_t.shape[0]:
        raise ValueError(f"shape mismatch: features {tuple(F_t.shape)} vs weight {tuple(W_t.shape)}")
    out = A_t @ F_t @ W_t
    if activation == "leaky":
        out = torch.nn.functional.leaky_relu(out, negative_slope=0.01)
    elif activation == "identity":
        pass
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return out if torch_in else out.numpy()


def combine_local_to_global(per_view, scheme):
    """Average per-view node features into the canonical global graph.

    per_view maps view id -> (k_v, c) tensor in the view's subset order.
    Every canonical node must be covered by at least one provided view.
    """
    views = sorted(per_view.keys())
    c = per_view[views[0]].shape[1]
    n = scheme.n_landmarks
    acc = torch.zeros((n, c), dtype=torch.float64)
    cnt = torch.zeros((n, 1), dtype=torch.float64)
    for view in views:
        idx = torch.from_numpy(scheme.subset(view))
        acc = acc.index_add(0, idx, per_view[view])
        cnt = cnt.index_add(0, idx, torch.ones((len(idx), 1), dtype=torch.float64))
    if torch.any(cnt == 0):
        raise ValueError("canonical landmark covered by no view")
    return acc / cnt


@dataclass
class VcGcnConfig:
    feature_channels: int = 16  # detector stub channels C (node input is C+3)
    hidden: int = 64
    attn_channels: int = 32  # C1
    layers_per_stack: int = 2
    blocks: int = 3
    seed: int = 0


@dataclass
class LossWeights:
    detect: float = 0.1
    l2d: float = 0.8
    l3d: float = 1.0

    def __post_init__(self):
        if min(self.detect, self.l2d, self.l3d) < 0:
            raise ValueError("loss weights must be non-negative")


def _init_weight(shape, gen):
    bound = np.sqrt(6.0 / sum(shape))
    w = torch.empty(*shape, dtype=torch.float64)
    with torch.no_grad():
        w.uniform_(-bound, bound, generator=gen)
    return torch.nn.Parameter(w)


class GcnStack(torch.nn.Module):
    def __init__(self, dims, gen):
        super().__init__()
        self.weights = torch.nn.ParameterList(
            [_init_weight((a, b), gen) for a, b in zip(dims[:-1], dims[1:])]
        )

    def forward(self, F, A_hat):
        for W in self.weights:
            F = gcn_layer(F, A_hat, W)
        return F


class G2LFusion(torch.nn.Module):
    """Non-local global-to-local fusion (shared across views in a block)."""

    def __init__(self, channels, attn_channels, gen):
        super().__init__()
        self.local_proj = _init_weight((channels, attn_channels), gen)
        self.global_proj = _init_weight((channels, attn_channels), gen)
        self.value_proj = _init_weight((channels, channels), gen)

    def forward(self, F_global, F_local, A_hat_global, A_hat_local):
        q = gcn_layer(F_local, A_hat_local, self.local_proj)  # (k_v, C1)
        k = gcn_layer(F_global, A_hat_global, self.global_proj)  # (44, C1)
        attn = torch.softmax(q @ k.T, dim=1)  # rows sum to 1
        return attn @ (F_global @ self.value_proj) + F_local


class VcGcnBlock(torch.nn.Module):
    def __init__(self, in_channels, cfg, views, gen):
        super().__init__()
        h = cfg.hidden
        dims = [in_channels] + [h] * cfg.layers_per_stack
        self.local_stacks = torch.nn.ModuleDict(
            {v: GcnStack(dims, gen) for v in views}
        )
        self.global_stack = GcnStack([h] * (cfg.layers_per_stack + 1), gen)
        self.g2l = G2LFusion(h, cfg.attn_channels, gen)

    def forward(self, per_view, scheme, A_hat_local, A_hat_global):
        local = {
            v: self.local_stacks[v](F, A_hat_local[v]) for v, F in per_view.items()
        }
        F_global = self.global_stack(combine_local_to_global(local, scheme), A_hat_global)
        enhanced = {
            v: self.g2l(F_global, local[v], A_hat_global, A_hat_local[v])
            for v in local
        }
        return enhanced, F_global


class VcGcn(torch.nn.Module):
    """Stacked VC-GCN blocks with a displacement-decoding head."""

    def __init__(self, scheme, cfg=None):
        super().__init__()
        self.cfg = cfg or VcGcnConfig()
        self.scheme = scheme
        self.views = tuple(sorted(scheme.view_subsets.keys()))
        gen = torch.Generator().manual_seed(self.cfg.seed)
        in_ch = self.cfg.feature_channels + 3
        h = self.cfg.hidden
        self.blocks = torch.nn.ModuleList()
        for b in range(self.cfg.blocks):
            self.blocks.append(
                VcGcnBlock(in_ch if b == 0 else h, self.cfg, self.views, gen)
            )
        self.final_stack = GcnStack([h] * (self.cfg.layers_per_stack + 1), gen)
        self.head = _init_weight((h, 3), gen)
        self._A_local = {
            v: torch.from_numpy(normalize_adjacency(scheme.adjacency(v)))
            for v in self.views
        }
        self._A_global = torch.from_numpy(normalize_adjacency(scheme.adjacency()))

    def forward(self, per_view_features, L_init):
        """Refined landmarks L_init + decoded displacement, (44, 3)."""
        F = {
            v: f if isinstance(f, torch.Tensor) else torch.from_numpy(np.asarray(f, dtype=np.float64))
            for v, f in per_view_features.items()
        }
        L = (L_init if isinstance(L_init, torch.Tensor)
             else torch.from_numpy(np.asarray(L_init, dtype=np.float64)))
        for block in self.blocks:
            F, _ = block(F, self.scheme, self._A_local, self._A_global)
        F_global = self.final_stack(
            combine_local_to_global(F, self.scheme), self._A_global
        )
        disp = gcn_layer(F_global, self._A_global, self.head, activation="identity")
        return L + disp


def init_features(per_view_2d_features, per_view_L):
    """Initial node features: image-feature channels concatenated with the
    per-view lifted 3D landmark positions."""
    out = {}
    for view in per_view_2d_features:
        feat = np.asarray(per_view_2d_features[view], dtype=np.float64)
        pos = np.asarray(per_view_L[view], dtype=np.float64)
        out[view] = np.concatenate([feat, pos], axis=1)
    return out


def smooth_l1(x):
    """Smooth-L1 with knee at 1: 0.5 x^2 inside, |x| - 0.5 outside.

    Components (last axis) are summed, remaining axes averaged; scalars and
    1-d inputs are treated as a single landmark's components.
    """
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))
    a = torch.abs(t)
    elt = torch.where(a <= 1.0, 0.5 * t * t, a - 0.5)
    if elt.ndim == 0:
        return elt if isinstance(x, torch.Tensor) else float(elt)
    per_item = elt.sum(dim=-1) if elt.ndim > 1 else elt
    out = per_item.mean()
    return out if isinstance(x, torch.Tensor) else float(out)


def _project_torch(camera, pts):
    R = torch.from_numpy(camera.rotation)
    t = torch.from_numpy(camera.translation)
    pv = pts @ R.T + t
    w, h = camera.image_size
    u = w / 2.0 + camera.scale * pv[:, 0]
    v = h / 2.0 + camera.scale * pv[:, 1]
    return torch.stack([u, v], dim=1)


def total_loss(P_hat, P_gt, L_hat, L_gt, rig, scheme, weights=None):
    """Three-term landmark loss (detection, 3D, reprojection).

    The detection term compares the stubbed 2D detections against the 2D
    ground truth; its inputs carry no parameters, so it contributes no
    gradient.  Returns (total, per-term breakdown).
    """
    weights = weights or LossWeights()
    L_hat_t = (L_hat if isinstance(L_hat, torch.Tensor)
               else torch.from_numpy(np.asarray(L_hat, dtype=np.float64)))
    L_gt_t = torch.from_numpy(np.asarray(L_gt, dtype=np.float64))
    views = sorted(P_gt.keys())
    # 2D residuals are divided by the orthographic pixel scale so every term
    # is measured in model units and the balance is image-size invariant
    detect = sum(
        smooth_l1(torch.from_numpy(
            np.asarray(P_hat[v] - P_gt[v], dtype=np.float64) / rig[v].scale))
        for v in views
    )
    l3d = smooth_l1(L_hat_t - L_gt_t)
    l2d = sum(
        smooth_l1(
            (_project_torch(rig[v], L_hat_t[torch.from_numpy(scheme.subset(v))])
             - torch.from_numpy(np.asarray(P_gt[v], dtype=np.float64)))
            / rig[v].scale
        )
        for v in views
    )
    total = weights.detect * detect + weights.l3d * l3d + weights.l2d * l2d
    breakdown = {
        "detect": float(torch.as_tensor(detect).detach()),
        "3d": float(l3d.detach()),
        "2d": float(torch.as_tensor(l2d).detach()),
    }
    return total, breakdown


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 200
    cosine_decay: bool = True
    seed: int = 0
    holdout: int = 0  # trailing samples held out for the MPJPE trace


def train_vcgcn(model, corpus, cfg=None, weights=None, root_index=25):
    """Full-batch training over a corpus of samples.

    Each sample is a dict with 'features' (view -> (k_v, C+3)), 'L_init',
    'L_gt' (44, 3), 'P_hat'/'P_gt' (view -> (k_v, 2)) and 'rig'.  Returns
    per-epoch (loss, mpjpe) traces; mpjpe is measured on the held-out split
    when cfg.holdout > 0, else on the training samples.
    """
    from .metrics import mpjpe as mpjpe_fn

    cfg = cfg or TrainConfig()
    weights = weights or LossWeights()
    if not corpus:
        raise ValueError("empty training corpus")
    torch.manual_seed(cfg.seed)
    train = corpus[: len(corpus) - cfg.holdout] if cfg.holdout else corpus
    evalset = corpus[len(corpus) - cfg.holdout:] if cfg.holdout else corpus
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    sched = (torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)
             if cfg.cosine_decay else None)
    loss_trace, mpjpe_trace = [], []
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        loss = torch.zeros((), dtype=torch.float64)
        for s in train:
            L_hat = model(s["features"], s["L_init"])
            term, _ = total_loss(s["P_hat"], s["P_gt"], L_hat, s["L_gt"],
                                 s["rig"], model.scheme, weights)
            loss = loss + term
        loss = loss / len(train)
        if not torch.isfinite(loss):
            from .field import DivergenceError

            raise DivergenceError(epoch)
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()
        with torch.no_grad():
            errs = [
                mpjpe_fn(model(s["features"], s["L_init"]).numpy(), s["L_gt"], root_index)
                for s in evalset
            ]
        loss_trace.append(float(loss.detach()))
        mpjpe_trace.append(float(np.mean(errs)))
    return loss_trace, mpjpe_trace


def save_params(model, path):
    """Architecture header plus raw float64 tensors in state-dict order."""
    cfg = model.cfg
    with open(path, "wb") as fh:
        header = (
            f"{PARAMS_MAGIC}\n"
            f"feature_channels {cfg.feature_channels}\n"
            f"hidden {cfg.hidden}\n"
            f"attn_channels {cfg.attn_channels}\n"
            f"layers_per_stack {cfg.layers_per_stack}\n"
            f"blocks {cfg.blocks}\n"
            f"seed {cfg.seed}\n"
            "data\n"
        )
        fh.write(header.encode("ascii"))
        for tensor in model.state_dict().values():
            fh.write(tensor.detach().numpy().astype("<f8").tobytes())


def load_params(path, scheme):
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != PARAMS_MAGIC:
            raise ValueError(f"{path}: not a VC-GCN parameter file")
        fields = {}
        for _ in range(6):
            k, v = fh.readline().decode("ascii").split()
            fields[k] = int(v)
        if fh.readline().decode("ascii").strip() != "data":
            raise ValueError(f"{path}: missing data marker")
        cfg = VcGcnConfig(
            feature_channels=fields["feature_channels"],
            hidden=fields["hidden"],
            attn_channels=fields["attn_channels"],
            layers_per_stack=fields["layers_per_stack"],
            blocks=fields["blocks"],
            seed=fields["seed"],
        )
        model = VcGcn(scheme, cfg)
        state = model.state_dict()
        for key, tensor in state.items():
            n = tensor.numel()
            buf = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(tuple(tensor.shape))
            state[key] = torch.from_numpy(buf.copy())
        model.load_state_dict(state)
        return model
