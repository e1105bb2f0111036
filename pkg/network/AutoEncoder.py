import logging
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from network.Adam import Adam, AdamState
from network.Mlp import GradientRecord, MlpSpec, ParameterSet, backward, forward_cache, init_params, mlp_forward
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.errors import DimensionError, DomainError, NumericError

CHECKPOINT_KIND = "autoencoder"


@dataclass
class AeBatch:
    obs: np.ndarray
    next_obs: np.ndarray
    reward: np.ndarray

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=np.float64))
        self.next_obs = np.atleast_2d(np.asarray(self.next_obs, dtype=np.float64))
        self.reward = np.atleast_1d(np.asarray(self.reward, dtype=np.float64))
        if len(self.obs) == 0:
            raise DomainError("autoencoder batch is empty")
        if self.obs.shape != self.next_obs.shape or len(self.reward) != len(self.obs):
            raise DimensionError("batch parts disagree: obs {}, next_obs {}, reward {}".format(
                self.obs.shape, self.next_obs.shape, self.reward.shape))

    def __len__(self):
        return len(self.obs)

    def take(self, idx):
        return AeBatch(self.obs[idx], self.next_obs[idx], self.reward[idx])


class AutoEncoder:
    """Observation autoencoder with a linear reward head on the feature.

    Parameters live in one ParameterSet under the prefixes ``encoder``,
    ``decoder`` and ``sr`` (the reward weights ``sr.omega``).
    """

    def __init__(self, obs_dim, d_f=16, hidden=64, rng=None, params=None, lr=1e-3,
                 hidden_activation="relu", init="orthogonal"):
        self.log = logging.getLogger(self.__class__.__name__)
        self.encoder_spec = MlpSpec((obs_dim, hidden, d_f), hidden_activation, "linear", init)
        self.decoder_spec = MlpSpec((d_f, hidden, obs_dim), hidden_activation, "linear", init)
        if params is None:
            params = init_params(self.encoder_spec, rng).prefixed("encoder") \
                .merge(init_params(self.decoder_spec, rng).prefixed("decoder")) \
                .merge(ParameterSet({"sr.omega": np.zeros(d_f)}))
        self.params = params
        self.check_params()
        self.optimizer = Adam(lr)
        self.meta = {}

    @property
    def d_f(self):
        return self.encoder_spec.output_size

    @property
    def obs_dim(self):
        return self.encoder_spec.input_size

    def check_params(self):
        self.params.select("encoder").check_spec(self.encoder_spec)
        self.params.select("decoder").check_spec(self.decoder_spec)
        if self.params["sr.omega"].shape != (self.d_f,):
            raise DimensionError("sr.omega has shape {}, expected ({},)".format(self.params["sr.omega"].shape, self.d_f))

    def encode(self, obs):
        return mlp_forward(self.encoder_spec, self.params.select("encoder"), obs)

    def decode(self, f):
        return mlp_forward(self.decoder_spec, self.params.select("decoder"), f)

    def predict_reward(self, obs):
        return self.encode(obs) @ self.params["sr.omega"]

    def losses(self, batch):
        """(reconstruction MSE over obs and next_obs, mean squared reward-prediction error)."""
        x = np.concatenate([batch.obs, batch.next_obs])
        recon = float(np.mean((self.decode(self.encode(x)) - x) ** 2))
        sr = float(np.mean((self.predict_reward(batch.obs) - batch.reward) ** 2))
        return recon, sr

    def gradients(self, batch):
        encoder = self.params.select("encoder")
        decoder = self.params.select("decoder")
        omega = self.params["sr.omega"]
        n = len(batch)

        x = np.concatenate([batch.obs, batch.next_obs])
        f, _ = forward_cache(self.encoder_spec, encoder, x)
        x_hat, _ = forward_cache(self.decoder_spec, decoder, f)
        recon_err = x_hat - x
        recon = float(np.mean(recon_err ** 2))
        dec_grads, df = backward(self.decoder_spec, decoder, f, 2.0 * recon_err / recon_err.size,
                                 return_input_grad=True)

        sr_err = f[:n] @ omega - batch.reward
        sr = float(np.mean(sr_err ** 2))
        d_omega = 2.0 * (sr_err @ f[:n]) / n
        df[:n] += np.outer(2.0 * sr_err / n, omega)

        enc_grads = backward(self.encoder_spec, encoder, x, df)
        if not (np.isfinite(recon) and np.isfinite(sr)):
            raise NumericError("non-finite autoencoder loss (recon {}, sr {})".format(recon, sr))
        grads = GradientRecord()
        grads.add(enc_grads.prefixed("encoder"))
        grads.add(dec_grads.prefixed("decoder"))
        grads["sr.omega"] = d_omega
        return grads.check_finite(), recon, sr

    def ae_update(self, batch):
        """One optimizer step on the joint reconstruction + reward loss; returns both pre-step losses."""
        grads, recon, sr = self.gradients(batch)
        self.params = self.optimizer.step(self.params, grads)
        return recon, sr

    def pretrain(self, dataset, rng, max_steps=2000, stop_loss=1e-3, batch_size=64, check_every=50,
                 progress=True):
        """Minibatch training until the full-dataset reconstruction loss drops below stop_loss."""
        if len(dataset) == 0:
            raise DomainError("pretraining dataset is empty")
        history = []
        for step in tqdm(range(1, max_steps + 1), desc="autoencoder", leave=False, disable=not progress):
            idx = rng.integers(len(dataset), size=min(batch_size, len(dataset)))
            recon, sr = self.ae_update(dataset.take(idx))
            history.append((step, recon, sr))
            if step % check_every == 0:
                full_recon, _ = self.losses(dataset)
                if full_recon < stop_loss:
                    self.log.info("pretraining reached recon loss {:.2e} after {} steps".format(full_recon, step))
                    break
        return history

    def parameter_count(self):
        return self.params.count()

    def save(self, path, meta=None):
        spec = {"encoder": self.encoder_spec.to_dict(), "decoder": self.decoder_spec.to_dict()}
        meta = dict(meta or {}, adam=self.optimizer.state.to_dict())
        return save_checkpoint(path, CHECKPOINT_KIND, spec, self.params, meta)

    @classmethod
    def load(cls, path, lr=1e-3):
        document = load_checkpoint(path, CHECKPOINT_KIND)
        encoder = MlpSpec.from_dict(document["spec"]["encoder"])
        ae = cls(encoder.input_size, d_f=encoder.output_size, hidden=encoder.layer_sizes[1],
                 params=document["params"], lr=lr, hidden_activation=encoder.hidden_activation, init=encoder.init)
        ae.meta = document["meta"]
        if "adam" in ae.meta:
            ae.optimizer.state = AdamState.from_dict(ae.meta["adam"])
        return ae
