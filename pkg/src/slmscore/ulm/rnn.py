"""Recurrent unit LM: a single-layer LSTM trained with Adam and truncated BPTT.

All math is plain numpy in float64. Parameters:

    emb    (V+2, E)   unit/BOS/EOS embeddings (EOS row exists but is never input)
    w_x    (E, 4H)    input weights, gate order i, f, g, o along the last axis
    w_h    (H, 4H)    recurrent weights, same gate order
    bias   (4H,)      gate biases (forget gate initialized to +1)
    w_out  (H, V+1)   projection to units + EOS logits

Training minimizes mean per-token cross-entropy of next-unit prediction with
EOS as the final target of every sequence. The analytic backward pass is
verified against central finite differences by ``gradcheck_rnn``.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import BadMagic, DivergedLoss, EmptyCorpus, InvariantViolation, TruncatedFile
from ..tokenizer import POLICIES, TokenSequence
from .base import TrainConfig, UnitLM, Vocabulary, log_softmax

RNN_MAGIC = b"SLMR"
RNN_VERSION = 1

PARAM_ORDER = ("emb", "w_x", "w_h", "bias", "w_out")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(vocab: Vocabulary, embed_dim: int, hidden_dim: int, rng: np.random.Generator):
    """Small uniform init; forget-gate bias at +1 so early memory persists."""
    scale = 0.1
    h = hidden_dim
    params = {
        "emb": rng.uniform(-scale, scale, size=(vocab.size + 2, embed_dim)),
        "w_x": rng.uniform(-scale, scale, size=(embed_dim, 4 * h)),
        "w_h": rng.uniform(-scale, scale, size=(h, 4 * h)),
        "bias": np.zeros(4 * h),
        "w_out": rng.uniform(-scale, scale, size=(h, vocab.num_outcomes)),
    }
    params["bias"][h : 2 * h] = 1.0
    return params


def _forward_backward(
    params: dict,
    inputs: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray,
    h0: np.ndarray,
    c0: np.ndarray,
    drop_masks: Optional[np.ndarray] = None,
    want_grads: bool = True,
):
    """One BPTT segment over a (B, S) batch.

    Returns (loss_sum, n_targets, grads_of_loss_sum | None, h_S, c_S) where
    loss_sum is the unnormalized cross-entropy summed over masked positions.
    ``drop_masks`` is a pre-scaled (B, S, H) inverted-dropout mask or None.
    """
    emb, w_x, w_h, bias, w_out = (params[k] for k in PARAM_ORDER)
    batch, steps = inputs.shape
    hidden = w_h.shape[0]

    h, c = h0, c0
    cache = []
    loss_sum = 0.0
    for t in range(steps):
        x = emb[inputs[:, t]]
        z = x @ w_x + h @ w_h + bias
        gi = _sigmoid(z[:, :hidden])
        gf = _sigmoid(z[:, hidden : 2 * hidden])
        gg = np.tanh(z[:, 2 * hidden : 3 * hidden])
        go = _sigmoid(z[:, 3 * hidden :])
        c_new = gf * c + gi * gg
        tanh_c = np.tanh(c_new)
        h_new = go * tanh_c
        hd = h_new * drop_masks[:, t] if drop_masks is not None else h_new
        logp = log_softmax(hd @ w_out)
        loss_sum -= float((logp[np.arange(batch), targets[:, t]] * mask[:, t]).sum())
        cache.append((x, gi, gf, gg, go, c, c_new, tanh_c, h, hd, logp))
        h, c = h_new, c_new

    n_targets = int(mask.sum())
    if not want_grads:
        return loss_sum, n_targets, None, h, c

    grads = {k: np.zeros_like(params[k]) for k in PARAM_ORDER}
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    for t in range(steps - 1, -1, -1):
        x, gi, gf, gg, go, c_prev, c_new, tanh_c, h_prev, hd, logp = cache[t]
        dlogits = np.exp(logp)
        dlogits[np.arange(batch), targets[:, t]] -= 1.0
        dlogits *= mask[:, t][:, None]
        grads["w_out"] += hd.T @ dlogits
        dhd = dlogits @ w_out.T
        dh = (dhd * drop_masks[:, t] if drop_masks is not None else dhd) + dh_next
        do = dh * tanh_c
        dc = dh * go * (1.0 - tanh_c**2) + dc_next
        di = dc * gg
        df = dc * c_prev
        dg = dc * gi
        dz = np.concatenate(
            [
                di * gi * (1.0 - gi),
                df * gf * (1.0 - gf),
                dg * (1.0 - gg**2),
                do * go * (1.0 - go),
            ],
            axis=1,
        )
        grads["bias"] += dz.sum(axis=0)
        grads["w_x"] += x.T @ dz
        grads["w_h"] += h_prev.T @ dz
        np.add.at(grads["emb"], inputs[:, t], dz @ w_x.T)
        dh_next = dz @ w_h.T
        dc_next = dc * gf
    return loss_sum, n_targets, grads, h, c


class RnnModel(UnitLM):
    backend = "rnn"

    def __init__(
        self,
        vocab: Vocabulary,
        params: dict,
        policy: Optional[str],
        dropout: float = 0.0,
    ):
        super().__init__(vocab, policy)
        expected_emb = (vocab.size + 2, params["emb"].shape[1])
        if params["emb"].shape != expected_emb:
            raise InvariantViolation(f"embedding shape {params['emb'].shape} != {expected_emb}")
        for key in PARAM_ORDER:
            if not np.all(np.isfinite(params[key])):
                raise InvariantViolation(f"non-finite values in parameter {key!r}")
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_ORDER}
        self.dropout = dropout

    @property
    def embed_dim(self) -> int:
        return self.params["emb"].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.params["w_h"].shape[0]

    def step_log_distributions(self, tokens: np.ndarray, include_eos: bool = False) -> np.ndarray:
        n = tokens.size + (1 if include_eos else 0)
        inputs = np.concatenate([[self.vocab.bos_id], tokens])[:n]
        emb, w_x, w_h, bias, w_out = (self.params[k] for k in PARAM_ORDER)
        hidden = w_h.shape[0]
        h = np.zeros(hidden)
        c = np.zeros(hidden)
        rows = np.empty((n, self.vocab.num_outcomes))
        for t in range(n):
            z = emb[inputs[t]] @ w_x + h @ w_h + bias
            gi = _sigmoid(z[:hidden])
            gf = _sigmoid(z[hidden : 2 * hidden])
            gg = np.tanh(z[2 * hidden : 3 * hidden])
            go = _sigmoid(z[3 * hidden :])
            c = gf * c + gi * gg
            h = go * np.tanh(c)
            rows[t] = log_softmax(h @ w_out)
        return rows


def _snap_to_f32(params: dict) -> dict:
    """Round parameters to their float32 representation so disk round trips
    are bit-exact and in-memory scoring matches a reloaded model."""
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def train_rnn(
    corpus: Sequence[TokenSequence],
    vocab: Vocabulary,
    cfg: TrainConfig = TrainConfig(backend="rnn"),
) -> tuple[RnnModel, list[float]]:
    """Train the LSTM on a token corpus; returns (model, per-epoch loss trace).

    Deterministic for a given config: fixed data order, seeded init and
    dropout, single-threaded updates. Sequences are batched in corpus order,
    padded with BOS inputs (loss-masked), and optimized with Adam on
    truncated-BPTT segments of ``cfg.bptt_len`` steps.
    """
    if not corpus:
        raise EmptyCorpus("rnn training needs at least one sequence")
    policies = {ts.policy for ts in corpus}
    if len(policies) != 1:
        raise InvariantViolation(f"corpus mixes dedup policies: {sorted(policies)}")
    policy = policies.pop()
    for ts in corpus:
        if int(ts.tokens.max()) >= vocab.size:
            raise InvariantViolation(
                f"utterance {ts.utt_id!r} has token >= vocabulary {vocab.size}"
            )

    rng = np.random.default_rng(cfg.seed)
    params = init_params(vocab, cfg.embed_dim, cfg.hidden_dim, rng)
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    pairs = []
    for ts in corpus:
        inp = np.concatenate([[vocab.bos_id], ts.tokens])
        tgt = np.concatenate([ts.tokens, [vocab.size]])  # EOS outcome index is V
        pairs.append((inp, tgt))

    trace = []
    hidden = cfg.hidden_dim
    for _epoch in range(cfg.epochs):
        epoch_loss = 0.0
        epoch_count = 0
        for start in range(0, len(pairs), cfg.batch_size):
            group = pairs[start : start + cfg.batch_size]
            batch = len(group)
            longest = max(len(inp) for inp, _ in group)
            inputs = np.full((batch, longest), vocab.bos_id, dtype=np.int64)
            targets = np.zeros((batch, longest), dtype=np.int64)
            mask = np.zeros((batch, longest))
            for row, (inp, tgt) in enumerate(group):
                inputs[row, : len(inp)] = inp
                targets[row, : len(tgt)] = tgt
                mask[row, : len(tgt)] = 1.0

            h = np.zeros((batch, hidden))
            c = np.zeros((batch, hidden))
            for seg in range(0, longest, cfg.bptt_len):
                seg_end = min(seg + cfg.bptt_len, longest)
                seg_mask = mask[:, seg:seg_end]
                n_seg = int(seg_mask.sum())
                if n_seg == 0:
                    break
                drop = None
                if cfg.dropout > 0:
                    keep = 1.0 - cfg.dropout
                    drop = rng.binomial(
                        1, keep, size=(batch, seg_end - seg, hidden)
                    ) / keep
                loss_sum, _, grads, h, c = _forward_backward(
                    params,
                    inputs[:, seg:seg_end],
                    targets[:, seg:seg_end],
                    seg_mask,
                    h,
                    c,
                    drop_masks=drop,
                )
                if not np.isfinite(loss_sum):
                    raise DivergedLoss(f"loss became non-finite at epoch {_epoch}")
                epoch_loss += loss_sum
                epoch_count += n_seg

                for key in PARAM_ORDER:
                    grads[key] /= n_seg
                norm = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
                if cfg.grad_clip > 0 and norm > cfg.grad_clip:
                    for key in PARAM_ORDER:
                        grads[key] *= cfg.grad_clip / norm
                step += 1
                for key in PARAM_ORDER:
                    adam_m[key] = beta1 * adam_m[key] + (1 - beta1) * grads[key]
                    adam_v[key] = beta2 * adam_v[key] + (1 - beta2) * grads[key] ** 2
                    m_hat = adam_m[key] / (1 - beta1**step)
                    v_hat = adam_v[key] / (1 - beta2**step)
                    params[key] -= cfg.lr * m_hat / (np.sqrt(v_hat) + eps)
        trace.append(epoch_loss / max(epoch_count, 1))

    model = RnnModel(vocab, _snap_to_f32(params), policy=policy, dropout=cfg.dropout)
    return model, trace


def sequence_loss(model: RnnModel, ts: TokenSequence) -> float:
    """Mean cross-entropy (nats/target) of one sequence, EOS included, no dropout."""
    logprobs = model.token_logprobs(ts, include_eos=True)
    return -float(logprobs.mean())


def gradcheck_rnn(model: RnnModel, ts: TokenSequence, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    The loss is the mean cross-entropy over the sequence (EOS target
    included), computed in float64. Intended for small models (H <= 16).
    """
    if not (1e-6 <= epsilon <= 1e-3):
        raise InvariantViolation("epsilon must lie in [1e-6, 1e-3]")
    vocab = model.vocab
    inputs = np.concatenate([[vocab.bos_id], ts.tokens])[None, :]
    targets = np.concatenate([ts.tokens, [vocab.size]])[None, :]
    mask = np.ones_like(targets, dtype=np.float64)
    h0 = np.zeros((1, model.hidden_dim))
    c0 = np.zeros((1, model.hidden_dim))

    params = {k: v.copy() for k, v in model.params.items()}
    loss_sum, n, grads, _, _ = _forward_backward(params, inputs, targets, mask, h0, c0)

    worst = 0.0
    for key in PARAM_ORDER:
        flat = params[key].reshape(-1)
        analytic = grads[key].reshape(-1) / n
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + epsilon
            up, _, _, _, _ = _forward_backward(
                params, inputs, targets, mask, h0, c0, want_grads=False
            )
            flat[j] = original - epsilon
            down, _, _, _, _ = _forward_backward(
                params, inputs, targets, mask, h0, c0, want_grads=False
            )
            flat[j] = original
            numeric = (up - down) / (2.0 * epsilon * n)
            err = abs(analytic[j] - numeric) / max(1e-8, abs(analytic[j]) + abs(numeric))
            worst = max(worst, err)
    return worst


def save_rnn(model: RnnModel, path) -> None:
    """SLMR format: magic, u32 version, u32 V, u32 E, u32 H, u8 policy
    (0 dedup / 1 keep_repeats / 255 unknown), then float32 LE arrays in order
    emb, w_x, w_h, bias, w_out."""
    policy_byte = 255 if model.policy is None else POLICIES.index(model.policy)
    header = struct.pack(
        "<4sIIIIB",
        RNN_MAGIC,
        RNN_VERSION,
        model.vocab.size,
        model.embed_dim,
        model.hidden_dim,
        policy_byte,
    )
    arrays = b"".join(model.params[k].astype("<f4").tobytes() for k in PARAM_ORDER)
    Path(path).write_bytes(header + arrays)


def load_rnn(path) -> RnnModel:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != RNN_MAGIC:
        raise BadMagic(f"{path}: expected magic {RNN_MAGIC!r}")
    if len(raw) < 21:
        raise TruncatedFile(f"{path}: header truncated")
    version, v_size, embed_dim, hidden_dim, policy_byte = struct.unpack_from("<IIIIB", raw, 4)
    if version != RNN_VERSION:
        raise BadMagic(f"{path}: unsupported SLMR version {version}")
    vocab = Vocabulary(v_size)
    shapes = {
        "emb": (v_size + 2, embed_dim),
        "w_x": (embed_dim, 4 * hidden_dim),
        "w_h": (hidden_dim, 4 * hidden_dim),
        "bias": (4 * hidden_dim,),
        "w_out": (hidden_dim, vocab.num_outcomes),
    }
    offset = 21
    params = {}
    for key in PARAM_ORDER:
        count = int(np.prod(shapes[key]))
        if len(raw) < offset + 4 * count:
            raise TruncatedFile(f"{path}: parameter {key!r} truncated")
        params[key] = (
            np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
            .reshape(shapes[key])
            .astype(np.float64)
        )
        offset += 4 * count
    policy = None if policy_byte == 255 else POLICIES[policy_byte]
    return RnnModel(vocab, params, policy=policy)
