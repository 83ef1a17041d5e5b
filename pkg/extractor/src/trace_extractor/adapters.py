"""Model adapters.

An adapter owns a vision-language model and exposes exactly what the
extraction loop needs:

- ``begin(question_id, prompt_text, image_path)`` runs the vision encoder
  once and caches every hidden layer's features for the question.
- ``step_logits(session, layer_id, generated)`` returns the next-token
  logits when layer ``layer_id``'s visual features are substituted for the
  standard ones, conditioned on the tokens generated so far.
- ``noise_logits(session, generated)`` is the same through the standard
  layer but with a Gaussian-distorted image.
- ``unhooked_logits(session, generated)`` runs the model's own end-to-end
  forward with no capture machinery — a sanity reference for the
  standard-layer row.

``ToyLVLM`` is a deterministic miniature model for tests and demos;
``HFLlavaAdapter`` sketches the same contract over a Hugging Face LLaVA
checkpoint and requires downloaded weights.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import AdapterUnavailable, ExtractionError


class _Block(nn.Module):
    """One encoder layer; hooking the module captures its hidden state."""

    def __init__(self, dim: int):
        super().__init__()
        self.lin = nn.Linear(dim, dim)

    def forward(self, x):
        return torch.tanh(self.lin(x))


class ToyLVLM(nn.Module):
    """A tiny deterministic vision-language model.

    The vision encoder is a stack of ``_Block`` layers (1-based ids); the
    deployed model consumes the penultimate layer's features, mirroring
    common LVLM practice. The language side conditions next-token logits on
    the projected visual features and the mean embedding of the token
    prefix (a BOS sentinel keeps the empty prefix well-defined).
    """

    def __init__(self, vocab_size=32, img_dim=16, hidden=24, lm_dim=24,
                 n_layers=6, seed=1234):
        super().__init__()
        torch.manual_seed(seed)
        self.vocab_size = vocab_size
        self.img_dim = img_dim
        self.stem = nn.Linear(img_dim, hidden)
        self.blocks = nn.ModuleList(_Block(hidden) for _ in range(n_layers))
        self.standard_layer = n_layers - 1  # penultimate, 1-based
        self.projector = nn.Linear(hidden, lm_dim)
        self.tok_embed = nn.Embedding(vocab_size + 1, lm_dim)  # +1 = BOS
        self.mix = nn.Linear(2 * lm_dim, lm_dim)
        self.head = nn.Linear(lm_dim, vocab_size)
        self.eval()

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        h = torch.tanh(self.stem(image))
        for blk in self.blocks:
            h = blk(h)
        return h  # final layer; hooks observe the intermediate ones

    def lm_logits(self, visual: torch.Tensor, tokens: list[int]) -> torch.Tensor:
        v = torch.tanh(self.projector(visual))
        ids = torch.tensor([self.vocab_size] + list(tokens), dtype=torch.long)
        t = self.tok_embed(ids).mean(dim=0)
        z = torch.tanh(self.mix(torch.cat([v, t])))
        return self.head(z)

    def forward(self, image: torch.Tensor, tokens: list[int]) -> torch.Tensor:
        """End-to-end forward through the deployed (penultimate) layer."""
        h = torch.tanh(self.stem(image))
        for blk in self.blocks[: self.standard_layer]:
            h = blk(h)
        return self.lm_logits(h, tokens)


@dataclass
class ToySession:
    question_id: str
    image: torch.Tensor
    layer_states: dict[int, torch.Tensor]
    noise_states: dict[int, torch.Tensor] = field(default_factory=dict)


class ToyAdapter:
    """Adapter over ``ToyLVLM``; images are synthesized deterministically
    from the question id, so no image files are needed."""

    eos_token_id: int | None = None

    def __init__(self, model: ToyLVLM | None = None, noise_sigma: float = 0.5,
                 seed: int = 0, **_ignored):
        self.model = model if model is not None else ToyLVLM()
        self.vocab_size = self.model.vocab_size
        self.encoder_layer_count = len(self.model.blocks)
        self.noise_sigma = noise_sigma
        self.seed = seed

    def _image_for(self, question_id: str) -> torch.Tensor:
        digest = hashlib.sha256(
            f"{self.seed}:{question_id}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return torch.from_numpy(
            rng.normal(size=self.model.img_dim).astype(np.float32)
        )

    def _capture(self, image: torch.Tensor) -> dict[int, torch.Tensor]:
        states: dict[int, torch.Tensor] = {}
        hooks = []
        for i, blk in enumerate(self.model.blocks, start=1):
            hooks.append(blk.register_forward_hook(
                lambda _m, _inp, out, lid=i: states.__setitem__(
                    lid, out.detach().clone()
                )
            ))
        try:
            with torch.no_grad():
                self.model.encode(image)
        finally:
            for h in hooks:
                h.remove()
        return states

    def begin(self, question_id: str, prompt_text: str,
              image_path=None) -> ToySession:
        image = self._image_for(question_id)
        session = ToySession(question_id, image, self._capture(image))
        if self.noise_sigma > 0:
            digest = hashlib.sha256(
                f"noise:{self.seed}:{question_id}".encode("utf-8")
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            noisy = image + torch.from_numpy(
                (self.noise_sigma * rng.normal(size=self.model.img_dim))
                .astype(np.float32)
            )
            session.noise_states = self._capture(noisy)
        return session

    def step_logits(self, session: ToySession, layer_id: int,
                    generated: list[int]) -> np.ndarray:
        if layer_id not in session.layer_states:
            raise ExtractionError(
                f"layer {layer_id} out of range for this encoder "
                f"(1..{self.encoder_layer_count})"
            )
        with torch.no_grad():
            out = self.model.lm_logits(session.layer_states[layer_id], generated)
        return out.numpy().astype(np.float32)

    def noise_logits(self, session: ToySession,
                     generated: list[int]) -> np.ndarray:
        std = self.model.standard_layer
        with torch.no_grad():
            out = self.model.lm_logits(session.noise_states[std], generated)
        return out.numpy().astype(np.float32)

    def unhooked_logits(self, session: ToySession,
                        generated: list[int]) -> np.ndarray:
        with torch.no_grad():
            out = self.model(session.image, generated)
        return out.numpy().astype(np.float32)


class HFLlavaAdapter:
    """Same contract over a Hugging Face LLaVA checkpoint.

    Requires `transformers` with downloaded weights; constructing it without
    them raises ``AdapterUnavailable``. Substitution point: the selected
    vision-tower hidden layer's patch features pass through the model's own
    multi-modal projector before the language model, exactly as the
    deployed layer's features do.
    """

    def __init__(self, model_name: str, device: str = "cpu", **_ignored):
        try:
            from transformers import AutoProcessor, LlavaForConditionalGeneration
        except ImportError as exc:  # pragma: no cover - env dependent
            raise AdapterUnavailable(f"transformers unavailable: {exc}") from exc
        try:
            self.processor = AutoProcessor.from_pretrained(model_name)
            self.model = LlavaForConditionalGeneration.from_pretrained(
                model_name, torch_dtype=torch.float32
            ).to(device).eval()
        except Exception as exc:  # pragma: no cover - needs weights
            raise AdapterUnavailable(
                f"cannot load '{model_name}': {exc}"
            ) from exc
        self.device = device
        self.vocab_size = self.model.config.text_config.vocab_size
        self.encoder_layer_count = (
            self.model.config.vision_config.num_hidden_layers
        )
        self.eos_token_id = self.model.config.text_config.eos_token_id

    def begin(self, question_id, prompt_text, image_path):  # pragma: no cover
        from PIL import Image

        image = Image.open(image_path).convert("RGB")
        inputs = self.processor(
            images=image, text=prompt_text, return_tensors="pt"
        ).to(self.device)
        with torch.no_grad():
            vision = self.model.vision_tower(
                inputs["pixel_values"], output_hidden_states=True
            )
        # hidden_states[0] is the embedding output; 1-based layer i is [i]
        return {
            "inputs": inputs,
            "hidden_states": vision.hidden_states,
            "image_path": image_path,
        }

    def _logits_with_features(self, session, feats, generated):  # pragma: no cover
        with torch.no_grad():
            visual = self.model.multi_modal_projector(feats[:, 1:])  # drop CLS
            ids = session["inputs"]["input_ids"]
            if generated:
                gen = torch.tensor([generated], device=ids.device)
                ids = torch.cat([ids, gen], dim=1)
            embeds = self.model.get_input_embeddings()(ids)
            image_token = self.model.config.image_token_index
            mask = ids == image_token
            embeds[mask] = visual.reshape(-1, visual.shape[-1]).to(embeds.dtype)
            out = self.model.language_model(inputs_embeds=embeds)
        return out.logits[0, -1].float().cpu().numpy().astype(np.float32)

    def step_logits(self, session, layer_id, generated):  # pragma: no cover
        feats = session["hidden_states"][layer_id]
        return self._logits_with_features(session, feats, generated)

    def noise_logits(self, session, generated):  # pragma: no cover
        raise ExtractionError(
            "noise channel for real models needs a distorted-image forward; "
            "re-run begin() with a noised image"
        )

    def unhooked_logits(self, session, generated):  # pragma: no cover
        ids = session["inputs"]["input_ids"]
        if generated:
            gen = torch.tensor([generated], device=ids.device)
            ids = torch.cat([ids, gen], dim=1)
        with torch.no_grad():
            out = self.model(
                input_ids=ids, pixel_values=session["inputs"]["pixel_values"]
            )
        return out.logits[0, -1].float().cpu().numpy().astype(np.float32)


def build_adapter(model_name: str, *, device: str = "cpu",
                  noise_sigma: float = 0.5, seed: int = 0,
                  options: dict | None = None):
    options = options or {}
    if model_name == "toy":
        return ToyAdapter(noise_sigma=noise_sigma, seed=seed, **options)
    return HFLlavaAdapter(model_name, device=device, **options)
