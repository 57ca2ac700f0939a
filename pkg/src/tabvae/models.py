"""The VAE family: a linear baseline, a tensor-contraction variant, a
transformer variant, their hybrid, and the hybrid's two single-sided
ablations.

Short names used across the package and the CLI:

* ``base``     — linear encoder/decoder on the flat one-hot row
* ``tc``       — tokenized rows through tensor contraction layers only
* ``tf``       — transformers straight on the token stack
* ``tcf``      — contraction layers into/out of transformer heads
* ``tcf-enc``  — tcf with the decoder transformer removed
* ``tcf-dec``  — tcf with the encoder transformers replaced by contractions

Every model conditions on the target class: the class token (or one-hot
block for ``base``) is appended to both the encoder and the decoder input.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import serialize
from .layers import (Detokenizer, LinearLayer, TclLayer, Tokenizer,
                     TransformerBlockStack, constant, count_params)
from .schema import FeatureSchema
from .tensor import (Tape, Tensor, add, clip, concat, cross_entropy_logits,
                     exp, mse_sum, mul, narrow, reshape, silu, square, sub,
                     sum_all)
from .transforms import one_hot

VARIANTS = ("base", "tc", "tf", "tcf", "tcf-enc", "tcf-dec")

VARIANT_LABELS = {
    "base": "VAE",
    "tc": "TensorContracted",
    "tf": "Transformed",
    "tcf": "TensorConFormer",
    "tcf-enc": "TensorConFormer-enc",
    "tcf-dec": "TensorConFormer-dec",
}

LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0


@dataclass
class ModelSpec:
    variant: str
    d: int = 4
    hidden_tokens: int = 96
    latent_tokens: int = 32
    hidden_width: int = 512
    latent_width: int = 256
    n_tf_layers: int = 2
    n_heads: int = 1
    ffn_hidden: int = 128

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("d", "hidden_tokens", "latent_tokens", "hidden_width",
                     "latent_width", "n_tf_layers", "ffn_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def reparameterize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    """z = mu + sigma * eps with sigma from the clamped log-variance."""
    sigma = exp(mul(clip(logvar, LOGVAR_MIN, LOGVAR_MAX), 0.5))
    return add(mu, mul(sigma, constant(eps)))


class TabularVAE:
    def __init__(self, spec: ModelSpec, schema: FeatureSchema, seed: int = 0):
        self.spec = spec
        self.schema = schema
        self.seed = seed
        self.step = 0
        self.rng = np.random.default_rng([seed, 1])
        # attached by the trainer; needed to generate original-space samples
        self.class_prior = None
        self.n_train = None
        self.transforms = None

        rng = np.random.default_rng([seed, 0])
        s, m = spec, schema.m
        self._parts = {}
        if spec.variant == "base":
            m_in = schema.m_prime + schema.n_classes
            self._parts["enc_hidden"] = LinearLayer(m_in, s.hidden_width, rng)
            self._parts["enc_mu"] = LinearLayer(s.hidden_width, s.latent_width, rng)
            self._parts["enc_logvar"] = LinearLayer(s.hidden_width, s.latent_width, rng)
            self._parts["dec_hidden"] = LinearLayer(
                s.latent_width + schema.n_classes, s.hidden_width, rng)
            self._parts["dec_out"] = LinearLayer(s.hidden_width, schema.m_prime, rng)
        else:
            self._parts["tokenizer"] = Tokenizer(schema, s.d, rng)
            self._parts["detokenizer"] = Detokenizer(schema, s.d, rng)
            if spec.variant in ("tc", "tcf", "tcf-enc", "tcf-dec"):
                self._parts["enc_trunk"] = TclLayer(m + 1, s.hidden_tokens, s.d, rng)
            if spec.variant == "tc":
                self._parts["enc_mu"] = TclLayer(s.hidden_tokens, s.latent_tokens, s.d, rng)
                self._parts["enc_logvar"] = TclLayer(s.hidden_tokens, s.latent_tokens, s.d, rng)
            elif spec.variant in ("tcf", "tcf-enc"):
                self._parts["enc_latent"] = TclLayer(s.hidden_tokens, s.latent_tokens, s.d, rng)
                self._parts["enc_tf_mu"] = self._stack(rng)
                self._parts["enc_tf_logvar"] = self._stack(rng)
            elif spec.variant == "tcf-dec":
                self._parts["enc_latent"] = TclLayer(s.hidden_tokens, s.latent_tokens, s.d, rng)
                self._parts["enc_mu"] = TclLayer(s.latent_tokens, s.latent_tokens, s.d, rng)
                self._parts["enc_logvar"] = TclLayer(s.latent_tokens, s.latent_tokens, s.d, rng)
            elif spec.variant == "tf":
                self._parts["enc_tf_mu"] = self._stack(rng)
                self._parts["enc_tf_logvar"] = self._stack(rng)

            if spec.variant == "tf":
                self._parts["dec_tf"] = self._stack(rng)
                self._parts["dec_out"] = TclLayer(m + 2, m, s.d, rng)
            else:
                self._parts["dec_trunk"] = TclLayer(s.latent_tokens + 1, s.hidden_tokens,
                                                    s.d, rng)
                self._parts["dec_out"] = TclLayer(s.hidden_tokens, m, s.d, rng)
                if spec.variant in ("tcf", "tcf-dec"):
                    self._parts["dec_tf"] = self._stack(rng)

        self.params: dict = {}
        for prefix, part in self._parts.items():
            for name, tensor in part.params.items():
                self.params[f"{prefix}/{name}"] = tensor

    def _stack(self, rng) -> TransformerBlockStack:
        return TransformerBlockStack(self.spec.d, rng, n_layers=self.spec.n_tf_layers,
                                     ffn_hidden=self.spec.ffn_hidden,
                                     n_heads=self.spec.n_heads)

    # -- shapes --------------------------------------------------------------

    @property
    def latent_shape(self) -> tuple:
        if self.spec.variant == "base":
            return (self.spec.latent_width,)
        if self.spec.variant == "tf":
            return (self.schema.m + 1, self.spec.d)
        return (self.spec.latent_tokens, self.spec.d)

    def count_params(self) -> int:
        return count_params(self.params)

    # -- forward -------------------------------------------------------------

    def _cat_blocks(self, x_cat: np.ndarray) -> list:
        blocks = []
        off = 0
        for w in self.schema.cat_widths():
            blocks.append(x_cat[:, off:off + w])
            off += w
        return blocks

    def encode(self, x_num: np.ndarray, x_cat: np.ndarray, y: np.ndarray):
        """Posterior statistics (mu, log sigma^2) for a batch of rows."""
        y_oh = one_hot(y, self.schema.n_classes)
        if self.spec.variant == "base":
            r = constant(np.concatenate([x_num, x_cat, y_oh], axis=1))
            h = silu(self._parts["enc_hidden"].forward(r))
            return self._parts["enc_mu"].forward(h), self._parts["enc_logvar"].forward(h)

        tok = self._parts["tokenizer"]
        r = concat([tok.tokens(x_num, self._cat_blocks(x_cat)),
                    tok.target_token(y_oh)], axis=1)
        v = self.spec.variant
        if v == "tf":
            return (self._parts["enc_tf_mu"].forward(r),
                    self._parts["enc_tf_logvar"].forward(r))
        h = silu(self._parts["enc_trunk"].forward(r))
        if v == "tc":
            return self._parts["enc_mu"].forward(h), self._parts["enc_logvar"].forward(h)
        latent = self._parts["enc_latent"].forward(h)
        if v == "tcf-dec":
            return (self._parts["enc_mu"].forward(latent),
                    self._parts["enc_logvar"].forward(latent))
        return (self._parts["enc_tf_mu"].forward(latent),
                self._parts["enc_tf_logvar"].forward(latent))

    def decode(self, z: Tensor, y: np.ndarray):
        """Reconstruction from a latent batch: numeric values and logits."""
        y_oh = one_hot(y, self.schema.n_classes)
        if self.spec.variant == "base":
            s = concat([z, constant(y_oh)], axis=1)
            out = self._parts["dec_out"].forward(
                silu(self._parts["dec_hidden"].forward(s)))
            return self._split_flat(out)
        e_tilde = self._decode_tokens(z, y_oh)
        return self._parts["detokenizer"].forward(e_tilde)

    def _decode_tokens(self, z: Tensor, y_oh: np.ndarray) -> Tensor:
        s = concat([z, self._parts["tokenizer"].target_token(y_oh)], axis=1)
        if self.spec.variant == "tf":
            return self._parts["dec_out"].forward(self._parts["dec_tf"].forward(s))
        h = silu(self._parts["dec_trunk"].forward(s))
        e_tilde = self._parts["dec_out"].forward(h)
        if self.spec.variant in ("tcf", "tcf-dec"):
            e_tilde = self._parts["dec_tf"].forward(e_tilde)
        return e_tilde

    def _split_flat(self, out: Tensor):
        m_n = self.schema.m_n
        num = narrow(out, 1, 0, m_n) if m_n else None
        logits = []
        off = m_n
        for w in self.schema.cat_widths():
            logits.append(narrow(out, 1, off, w))
            off += w
        return num, logits

    # -- objective -----------------------------------------------------------

    def elbo_loss(self, x_num: np.ndarray, x_cat: np.ndarray, y: np.ndarray,
                  eps: np.ndarray | None = None):
        """Negative ELBO averaged over the batch.

        Reconstruction is summed over features (squared error for numerics,
        cross-entropy from logits for categoricals); the KL against N(0, I)
        is in closed form. Returns (loss, recon, kl) scalar tensors.
        """
        if len(y) == 0:
            raise ValueError("empty batch")
        mu, logvar = self.encode(x_num, x_cat, y)
        if eps is None:
            eps = self.rng.standard_normal(mu.data.shape)
        z = reparameterize(mu, logvar, eps)
        num, logits = self.decode(z, y)

        parts = []
        if num is not None:
            parts.append(mse_sum(num, x_num))
        for block, lg in zip(self._cat_blocks(x_cat), logits):
            parts.append(cross_entropy_logits(lg, block))
        recon = parts[0]
        for p in parts[1:]:
            recon = add(recon, p)

        lv = clip(logvar, LOGVAR_MIN, LOGVAR_MAX)
        kl = mul(sum_all(sub(add(square(mu), exp(lv)), add(1.0, lv))), 0.5)

        inv_b = 1.0 / len(y)
        return (mul(add(recon, kl), inv_b), mul(recon, inv_b), mul(kl, inv_b))

    def embeddings(self, x_num: np.ndarray, x_cat: np.ndarray, y: np.ndarray):
        """Deterministic (eps = 0) latent and reconstructed-output tokens."""
        if self.spec.variant == "base":
            raise ValueError("the linear baseline has no token embeddings")
        mu, logvar = self.encode(x_num, x_cat, y)
        z = reparameterize(mu, logvar, np.zeros(mu.data.shape))
        e_tilde = self._decode_tokens(z, one_hot(y, self.schema.n_classes))
        return z.data, e_tilde.data

    # -- persistence ----------------------------------------------------------

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {
            "variant": self.spec.variant,
            "spec": asdict(self.spec),
            "schema": self.schema.to_dict(),
            "seed": self.seed,
            "step": self.step,
            "class_prior": None if self.class_prior is None else list(self.class_prior),
            "n_train": self.n_train,
            "transforms": self.transforms,
        }
        serialize.write_json(out / "spec.json", meta)
        serialize.write_param_pack(out / "params.bin",
                                   {name: t.data for name, t in self.params.items()})
        state = self.rng.bit_generator.state
        serialize.write_json(out / "rng.json", state)

    @classmethod
    def load(cls, in_dir) -> "TabularVAE":
        src = Path(in_dir)
        meta = serialize.read_json(src / "spec.json")
        spec = ModelSpec(**meta["spec"])
        schema = FeatureSchema.from_dict(meta["schema"])
        model = cls(spec, schema, seed=meta["seed"])
        packed = serialize.read_param_pack(src / "params.bin")
        if set(packed) != set(model.params):
            raise ValueError("checkpoint parameters do not match the architecture")
        for name, arr in packed.items():
            if model.params[name].data.shape != arr.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            model.params[name].data = arr.copy()
        model.rng.bit_generator.state = serialize.read_json(src / "rng.json")
        model.step = meta["step"]
        model.class_prior = meta["class_prior"]
        model.n_train = meta["n_train"]
        model.transforms = meta["transforms"]
        return model
