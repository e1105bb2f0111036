import json
import logging
import os
import time

import numpy as np
import pandas as pd
from tensorboardX import SummaryWriter
from tqdm import tqdm

from agent.A2C import A2CRollout, ActorCritic
from agent.AdaptiveGoal import GoalUpdateTrigger
from agent.Policies import HighLevelPolicy, LowLevelPolicy
from agent.ReplayBuffer import ReplayBuffer
from agent.SegmentCollector import HierarchicalRollout, her_relabel
from agent.td_learning import mix_td_update, train_high_batch, train_low_batch
from envs import make_env
from experiments.Evaluation import FlatPolicy, evaluate
from experiments.MetricsLogger import A2C_COLUMNS, MetricsLogger
from network.AutoEncoder import AeBatch, AutoEncoder
from network.GoalMixer import GoalMixer, MixerSpec
from utils.color import Color, highlight
from utils.Config import echo_config
from utils.errors import DomainError
from utils.plotting import smooth
from utils.Rng import derive_seed, make_stream

AE_CHECKPOINT = "autoencoder.ckpt.json"
AE_ADAPTED_CHECKPOINT = "autoencoder_adapted.ckpt.json"
MIXER_CHECKPOINT = "mixer.ckpt.json"
A2C_CHECKPOINT = "a2c.ckpt.json"
TRIGGER_LOG = "trigger_log.csv"
PLATEAU_EVALS = 3
PLATEAU_TOLERANCE = 0.02


def plateaued(history, evals=PLATEAU_EVALS, tolerance=PLATEAU_TOLERANCE):
    """True when the last evals values differ pairwise by less than tolerance, relatively, and are nonzero."""
    if len(history) < evals:
        return False
    tail = history[-evals:]
    if tail[-1] <= 0.0:
        return False
    return all(abs(b - a) < tolerance * max(abs(a), 1e-12) for a, b in zip(tail, tail[1:]))


class StageRunner:
    """Runs one training stage for one seed, reading earlier stages' artifacts from the output directory."""

    def __init__(self, cfg, seed=None):
        self.log = logging.getLogger(self.__class__.__name__)
        self.cfg = cfg
        self.seed = int(seed if seed is not None else cfg.run.seeds[0])
        self.out_dir = cfg.run.out_dir
        os.makedirs(self.out_dir, exist_ok=True)
        echo_config(cfg, self.out_dir)
        self.env = make_env(cfg.env)
        self.info = self.env.info
        self.config_hash = cfg.config_hash()
        self.writer = SummaryWriter(logdir=os.path.join(self.out_dir, "tensorboard")) if cfg.run.tensorboard else None
        self.goal_draws = np.zeros(self.info.subgoal_count, dtype=np.int64)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def run(self):
        stages = {
            "low": self.stage1_low,
            "high": self.stage2_high,
            "mix": self.stage3_mix,
            "a2c": self.a2c_baseline,
        }
        return stages[self.cfg.run.stage]()

    # artifacts

    def low_paths(self):
        if self.cfg.hrl.share_low:
            return ["low.ckpt.json"] * self.info.n_agents
        return ["low_{}.ckpt.json".format(i) for i in range(self.info.n_agents)]

    def load_lows(self):
        cache = {}
        lows = []
        for name in self.low_paths():
            if name not in cache:
                cache[name] = LowLevelPolicy.load(self.path(name), lr=self.cfg.run.lr_low)
                trained_T = cache[name].meta.get("T")
                if trained_T is not None and trained_T != self.info.max_steps:
                    self.log.warning("{} was trained with T={}, this run uses T={}".format(
                        name, trained_T, self.info.max_steps))
            lows.append(cache[name])
        return lows

    def load_highs(self, suffix=""):
        return [HighLevelPolicy.load(self.path("high{}_{}.ckpt.json".format(suffix, i)), lr=self.cfg.run.lr_high)
                for i in range(self.info.n_agents)]

    def load_autoencoder(self):
        name = AE_ADAPTED_CHECKPOINT if os.path.exists(self.path(AE_ADAPTED_CHECKPOINT)) else AE_CHECKPOINT
        return AutoEncoder.load(self.path(name), lr=self.cfg.run.lr_ae)

    def meta(self):
        return {"env": self.cfg.env.name, "T": self.info.max_steps, "c": self.cfg.hrl.c, "seed": self.seed,
                "config_hash": self.config_hash}

    def _unique(self, networks):
        seen = {}
        for net in networks:
            seen.setdefault(id(net), net)
        return list(seen.values())

    def _log_sizes(self, **networks):
        for name, count in networks.items():
            self.log.info("{} parameters: {}".format(name, count))

    def _progress(self, desc):
        return tqdm(total=self.cfg.run.total_steps, desc=desc, leave=False, disable=not self.cfg.run.progress)

    def _episode_loop(self, rollout, metrics, stage, seed_rng, on_episode=None, scalars=None):
        """Play episodes until the step budget is spent or on_episode asks to stop."""
        run = self.cfg.run
        episode = 0
        with self._progress(stage) as bar:
            while rollout.total_steps < run.total_steps:
                before = rollout.total_steps
                result = rollout.run_episode(derive_seed(seed_rng), episode=episode)
                episode += 1
                bar.update(rollout.total_steps - before)
                issued, achieved = result.success_counts(self.info.subgoal_count)
                metrics.add_episode(result.total_reward, result.intrinsic_mean, issued, achieved)
                if metrics.pending >= run.log_every:
                    metrics.flush(rollout.total_steps, episode, **(scalars() if scalars else {}))
                if on_episode is not None and on_episode(rollout.total_steps, episode):
                    break
        metrics.flush(rollout.total_steps, episode, **(scalars() if scalars else {}))
        return episode

    def _finish(self, stage, metrics, started, **extra):
        frame = metrics.to_frame()
        final = float(smooth(frame["reward_mean"], self.cfg.run.smoothing).iloc[-1]) if len(frame) else float("nan")
        summary = dict(stage=stage, seed=self.seed, config_hash=self.config_hash, final_smoothed_reward=final,
                       rows=len(frame), minutes=(time.time() - started) / 60.0, **extra)
        with open(self.path("summary_{}.json".format(stage)), "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True, default=float)
        if self.writer is not None:
            self.writer.close()
        self.log.info(highlight("Stage {} done for seed {}, time needed: {:.2f} minutes, final smoothed reward: {:.3f}"
                                .format(stage, self.seed, summary["minutes"], final)))
        return summary

    # stage 1

    def _build_lows(self, rng):
        hrl = self.cfg.hrl
        n = self.info.n_agents

        def build():
            return LowLevelPolicy.build(self.info.obs_dim, self.info.subgoal_count, self.info.action_count, hrl, rng,
                                        lr=self.cfg.run.lr_low)
        if hrl.share_low:
            return [build()] * n
        return [build() for _ in range(n)]

    def stage1_low(self):
        """Train the goal-conditioned low level on uniformly drawn subgoals, then pretrain the autoencoder."""
        started = time.time()
        run, hrl = self.cfg.run, self.cfg.hrl
        policy_rng = make_stream(self.seed, "low.policy")
        goal_rng = make_stream(self.seed, "low.goals")
        lows = self._build_lows(make_stream(self.seed, "low.init"))
        unique = self._unique(lows)
        buffers = {id(low): ReplayBuffer(run.buffer_size, make_stream(self.seed, "low.buffer.{}".format(k)))
                   for k, low in enumerate(unique)}
        self._log_sizes(low_level=unique[0].parameter_count() * len(unique))
        metrics = MetricsLogger(self.path("metrics_low.csv"), self.info.subgoal_count, writer=self.writer, tag="low")

        def choose_goal(i, obs, previous):
            # one goal per agent and episode; previous is None only on an episode's first segment
            if previous is not None:
                return previous.goal
            goal = int(goal_rng.integers(self.info.subgoal_count))
            self.goal_draws[goal] += 1
            return goal

        def on_segment(segment):
            buffer = buffers[id(lows[segment.agent_id])]
            buffer.extend(segment.lows)
            if hrl.her:
                buffer.extend(her_relabel(segment.lows, segment.achieved_log, hrl.T_M, hrl.beta_low))

        def on_step(step):
            if step < run.warmup_steps or step % run.train_every:
                return
            for low in unique:
                buffer = buffers[id(low)]
                if len(buffer):
                    metrics.add_loss("loss_low", train_low_batch(low, buffer.sample(run.batch_size), hrl.gamma,
                                                                 run.target_update))

        rollout = HierarchicalRollout(self.env, lows, choose_goal, hrl, policy_rng, epsilon=hrl.epsilon,
                                      on_segment=on_segment, on_step=on_step)
        history = []
        next_eval = [run.eval_every]

        def on_episode(step, episode):
            if step < next_eval[0]:
                return False
            next_eval[0] += run.eval_every
            report = evaluate(self.cfg.env, hrl, lows, run.eval_episodes, self.seed + step, n_jobs=run.n_jobs)
            history.append(float(np.mean(report.success_rate)))
            self.log.info("step {}: greedy subgoal success {}".format(
                step, ", ".join("{:.2f}".format(s) for s in report.success_rate)))
            return run.early_stop and plateaued(history)

        episodes = self._episode_loop(rollout, metrics, "low", make_stream(self.seed, "low.seeds"), on_episode,
                                      scalars=lambda: {"epsilon": hrl.epsilon(rollout.total_steps)})
        names = self.low_paths()
        for name, low in dict(zip(names, lows)).items():
            low.save(self.path(name), self.meta())

        ae, ae_losses = self.pretrain_autoencoder()
        return self._finish("low", metrics, started, episodes=episodes, steps=rollout.total_steps,
                            success_history=history, goal_draws=self.goal_draws.tolist(),
                            parameters={"low": unique[0].parameter_count(), "autoencoder": ae.parameter_count()},
                            autoencoder_recon=ae_losses[0], autoencoder_heldout_recon=ae_losses[1])

    def random_dataset(self, size, seed_name="ae.dataset"):
        """(obs, next_obs, reward) triples of the acting agent under uniformly random actions."""
        rng = make_stream(self.seed, seed_name)
        env = make_env(self.cfg.env)
        env.reset(derive_seed(rng))
        obs, next_obs, rewards = [], [], []
        while len(obs) < size:
            i = env.current_agent
            before = env.observe(i)
            result = env.step(i, int(rng.integers(self.info.action_count)))
            obs.append(before)
            next_obs.append(result.obs)
            rewards.append(result.reward)
            if result.done:
                env.reset(derive_seed(rng))
        return AeBatch(np.stack(obs), np.stack(next_obs), np.asarray(rewards))

    def pretrain_autoencoder(self):
        run, trig = self.cfg.run, self.cfg.trigger
        ae = AutoEncoder(self.info.obs_dim, d_f=trig.d_f, hidden=trig.ae_hidden, rng=make_stream(self.seed, "ae.init"),
                         lr=run.lr_ae)
        dataset = self.random_dataset(run.ae_dataset_size)
        heldout = self.random_dataset(max(1, run.ae_dataset_size // 4), "ae.heldout")
        ae.pretrain(dataset, make_stream(self.seed, "ae.batches"), max_steps=run.ae_pretrain_steps,
                    stop_loss=run.ae_stop_loss, batch_size=run.batch_size, progress=run.progress)
        recon, _ = ae.losses(dataset)
        heldout_recon, _ = ae.losses(heldout)
        self.log.info("autoencoder recon loss {:.2e} (held out {:.2e})".format(recon, heldout_recon))
        ae.save(self.path(AE_CHECKPOINT), self.meta())
        return ae, (recon, heldout_recon)

    # stage 2

    def stage2_high(self):
        """Train one high-level network per agent over the frozen low level, optionally with proactive updates."""
        started = time.time()
        run, hrl = self.cfg.run, self.cfg.hrl
        lows = self.load_lows()
        ae = self.load_autoencoder() if run.adapt else None
        trigger = GoalUpdateTrigger(ae, self.cfg.trigger, self.path(TRIGGER_LOG)) if ae is not None else None
        if trigger is not None and os.path.exists(trigger.log_path):
            os.remove(trigger.log_path)

        init_rng = make_stream(self.seed, "high.init")
        highs = [HighLevelPolicy.build(self.info.obs_dim, self.info.subgoal_count, hrl, init_rng, lr=run.lr_high)
                 for _ in range(self.info.n_agents)]
        buffers = [ReplayBuffer(run.buffer_size, make_stream(self.seed, "high.buffer.{}".format(i)))
                   for i in range(self.info.n_agents)]
        ae_buffer = ReplayBuffer(run.buffer_size, make_stream(self.seed, "ae.online"))
        self._log_sizes(high_level=sum(h.parameter_count() for h in highs),
                        low_level=sum(low.parameter_count() for low in self._unique(lows)),
                        autoencoder=ae.parameter_count() if ae is not None else 0)
        metrics = MetricsLogger(self.path("metrics_high.csv"), self.info.subgoal_count, writer=self.writer,
                                tag="high")
        goal_rng = make_stream(self.seed, "high.goals")
        rollout = None

        def choose_goal(i, obs, previous):
            return highs[i].select_subgoal(obs, goal_rng, mode="sample",
                                           temperature=hrl.temperature(rollout.total_steps))

        def on_segment(segment):
            buffers[segment.agent_id].add(segment.high)
            ae_buffer.add(segment.high)
            if rollout.total_steps < run.warmup_steps:
                return
            metrics.add_loss("loss_high", train_high_batch(highs[segment.agent_id],
                                                           buffers[segment.agent_id].sample(run.batch_size),
                                                           hrl.gamma, run.target_update))
            if ae is not None:
                sample = ae_buffer.sample(run.batch_size)
                ae.ae_update(AeBatch(np.stack([h.obs for h in sample]), np.stack([h.next_obs for h in sample]),
                                     np.array([h.summed_reward for h in sample])))

        rollout = HierarchicalRollout(self.env, lows, choose_goal, hrl, make_stream(self.seed, "high.policy"),
                                      epsilon=hrl.low_eval_epsilon, trigger=trigger, highs=highs,
                                      on_segment=on_segment)
        evals = []
        next_eval = [run.eval_every]

        def on_episode(step, episode):
            if trigger is not None:
                trigger.flush()
            if step >= next_eval[0]:
                next_eval[0] += run.eval_every
                report = evaluate(self.cfg.env, hrl, lows, run.eval_episodes, self.seed + step, highs=highs, ae=ae,
                                  trigger_cfg=self.cfg.trigger, n_jobs=run.n_jobs)
                evals.append((step, report.mean_reward, report.min_reward))
            return False

        episodes = self._episode_loop(rollout, metrics, "high", make_stream(self.seed, "high.seeds"), on_episode,
                                      scalars=lambda: {"temperature": hrl.temperature(rollout.total_steps)})
        for i, high in enumerate(highs):
            high.save(self.path("high_{}.ckpt.json".format(i)), dict(self.meta(), adapt=run.adapt))
        if ae is not None:
            trigger.flush()
            ae.save(self.path(AE_ADAPTED_CHECKPOINT), self.meta())
        pd.DataFrame(evals, columns=["step", "reward_mean", "reward_min"]).to_csv(self.path("eval_high.csv"),
                                                                                index=False)
        trigger_counts = {"calls": trigger.calls, "stage2_calls": trigger.stage2_calls,
                          "fired": trigger.fired} if trigger is not None else {}
        return self._finish("high", metrics, started, episodes=episodes, steps=rollout.total_steps, adapt=run.adapt,
                            trigger=trigger_counts, parameters={"high": highs[0].parameter_count()})

    # stage 3

    def stage3_mix(self):
        """Fine-tune the high level of every agent through the goal mixer."""
        started = time.time()
        run, hrl = self.cfg.run, self.cfg.hrl
        n = self.info.n_agents
        if n < 2:
            raise DomainError("goal mixing needs a multi-agent environment, {} has {} agent".format(
                self.cfg.env.name, n))
        lows = self.load_lows()
        highs = self.load_highs()
        ae = self.load_autoencoder() if run.adapt else None
        trigger = GoalUpdateTrigger(ae, self.cfg.trigger) if ae is not None else None
        spec = MixerSpec(n, self.info.state_dim, self.cfg.mixer.hidden_dim, self.cfg.mixer.hyper_hidden)
        mixer = GoalMixer(spec, make_stream(self.seed, "mix.init"), lr=run.lr_mix)
        for high in highs:
            high.optimizer.lr = run.lr_mix
        self._log_sizes(mixer=mixer.parameter_count(), high_level=sum(h.parameter_count() for h in highs))
        probe_before = mixer.monotonicity_probe(1000, make_stream(self.seed, "mix.probe"))

        buffer = ReplayBuffer(run.buffer_size, make_stream(self.seed, "mix.buffer"))
        metrics = MetricsLogger(self.path("metrics_mix.csv"), self.info.subgoal_count, writer=self.writer, tag="mix")
        goal_rng = make_stream(self.seed, "mix.goals")

        def choose_goal(i, obs, previous):
            return highs[i].select_subgoal(obs, goal_rng, mode="sample", temperature=hrl.temperature_end)

        def on_step(step):
            if step < run.warmup_steps or step % run.train_every or not len(buffer):
                return
            metrics.add_loss("loss_mix", mix_td_update(mixer, highs, buffer.sample(run.batch_size), hrl.gamma,
                                                       self.cfg.mixer.target_update))

        rollout = HierarchicalRollout(self.env, lows, choose_goal, hrl, make_stream(self.seed, "mix.policy"),
                                      epsilon=hrl.low_eval_epsilon, trigger=trigger, highs=highs, on_step=on_step,
                                      on_cycle=buffer.add)
        episodes = self._episode_loop(rollout, metrics, "mix", make_stream(self.seed, "mix.seeds"))
        probe_after = mixer.monotonicity_probe(1000, make_stream(self.seed, "mix.probe"))
        if probe_after < -1e-8:
            self.log.warning(highlight("mixer lost monotonicity: min partial {:.3e}".format(probe_after), Color.RED))
        mixer.save(self.path(MIXER_CHECKPOINT), self.meta())
        for i, high in enumerate(highs):
            high.save(self.path("high_mix_{}.ckpt.json".format(i)), self.meta())

        losses = metrics.to_frame()["loss_mix"].dropna()
        decile = max(1, len(losses) // 10)
        reduction = float(1.0 - losses.iloc[-decile:].mean() / losses.iloc[:decile].mean()) if len(losses) else 0.0
        return self._finish("mix", metrics, started, episodes=episodes, steps=rollout.total_steps,
                            probe_before=probe_before, probe_after=probe_after, loss_reduction=reduction,
                            parameters={"mixer": mixer.parameter_count(), "high": highs[0].parameter_count()})

    # baseline

    def a2c_baseline(self):
        """Flat advantage actor-critic with the same widths and reward, one network shared by all agents."""
        started = time.time()
        run, hrl = self.cfg.run, self.cfg.hrl
        model = ActorCritic.build(self.info.obs_dim, self.info.action_count, hrl, make_stream(self.seed, "a2c.init"),
                                  lr=run.lr_a2c, entropy_coef=run.a2c_entropy, value_coef=run.a2c_value_coef)
        self._log_sizes(actor_critic=model.parameter_count())
        rollout = A2CRollout(self.env, model, hrl.gamma, run.a2c_n_steps, make_stream(self.seed, "a2c.policy"),
                             make_stream(self.seed, "a2c.seeds"))
        metrics = MetricsLogger(self.path("metrics_a2c.csv"), self.info.subgoal_count, extra_columns=A2C_COLUMNS,
                                writer=self.writer, tag="a2c")
        episodes = 0
        evals = []
        next_eval = run.eval_every
        with self._progress("a2c") as bar:
            while rollout.total_steps < run.total_steps:
                before = rollout.total_steps
                losses = model.update(*rollout.collect())
                bar.update(rollout.total_steps - before)
                for name, value in losses.items():
                    metrics.add_loss(name, value)
                for reward, length, reached in rollout.pop_episodes():
                    episodes += 1
                    flags = [int(g in reached) for g in range(self.info.subgoal_count)]
                    metrics.add_episode(reward, issued=[1] * self.info.subgoal_count, achieved=flags)
                    if metrics.pending >= run.log_every:
                        metrics.flush(rollout.total_steps, episodes)
                if rollout.total_steps >= next_eval:
                    next_eval += run.eval_every
                    report = evaluate(self.cfg.env, hrl, [FlatPolicy(model)] * self.info.n_agents, run.eval_episodes,
                                      self.seed + rollout.total_steps, n_jobs=run.n_jobs, flat=True)
                    evals.append((rollout.total_steps, report.mean_reward, report.min_reward))
        metrics.flush(rollout.total_steps, episodes)
        model.save(self.path(A2C_CHECKPOINT), self.meta())
        pd.DataFrame(evals, columns=["step", "reward_mean", "reward_min"]).to_csv(self.path("eval_a2c.csv"), index=False)
        return self._finish("a2c", metrics, started, episodes=episodes, steps=rollout.total_steps,
                            parameters={"a2c": model.parameter_count()})
